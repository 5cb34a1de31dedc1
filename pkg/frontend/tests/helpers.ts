import fs from 'node:fs';

import type { Transport } from '../src/client.js';
import type { FrameMessage } from '../src/protocol.js';

/**
 * In-memory transport with a scripted service behind it: acks every
 * command with its id (like the real ticker thread), answers the two
 * queries from canned data, and lets tests inject arbitrary server lines.
 */
export class MockTransport implements Transport {
  sent: string[] = [];
  closed = false;
  private messageCb: ((line: string) => void) | null = null;
  private closeCb: (() => void) | null = null;

  constructor(
    private readonly canned: { motions: string[]; config: Record<string, number> } | null = null,
    /** Commands the scripted service refuses, by type. */
    private readonly errorOn: Set<string> = new Set(),
  ) {}

  send(line: string): void {
    if (this.closed) throw new Error('transport closed');
    this.sent.push(line);
    if (this.canned === null) return;
    const cmd = JSON.parse(line) as { type: string; id?: number };
    if (this.errorOn.has(cmd.type)) {
      this.deliver({ type: 'error', message: `scripted refusal of ${cmd.type}`, id: cmd.id });
    } else if (cmd.type === 'list_motions') {
      this.deliver({ type: 'motions', motions: this.canned.motions, id: cmd.id });
    } else if (cmd.type === 'get_config') {
      this.deliver({ type: 'config', ...this.canned.config, id: cmd.id });
    } else if (cmd.type === 'get_state') {
      this.deliver({ type: 'state', playing: false, id: cmd.id });
    } else {
      this.deliver({ type: 'ack', command: cmd.type, ok: true, id: cmd.id });
    }
  }

  onMessage(cb: (line: string) => void): void {
    this.messageCb = cb;
  }

  onClose(cb: () => void): void {
    this.closeCb = cb;
  }

  close(): void {
    this.closed = true;
  }

  /** Server-to-client delivery of one message (object or raw line). */
  deliver(msg: object | string): void {
    const line = typeof msg === 'string' ? msg : JSON.stringify(msg);
    this.messageCb?.(line);
  }

  /** Simulate the service dropping the connection. */
  dropConnection(): void {
    this.closed = true;
    this.closeCb?.();
  }

  sentMessages(): Array<Record<string, unknown>> {
    return this.sent.map((l) => JSON.parse(l) as Record<string, unknown>);
  }

  sentOfType(type: string): Array<Record<string, unknown>> {
    return this.sentMessages().filter((m) => m.type === type);
  }
}

export interface RecordedLog {
  messages: Array<Record<string, unknown>>;
  frames: FrameMessage[];
  meta: {
    dt: number;
    d: number;
    config: Record<string, number>;
    motions: string[];
    duration_s: number;
    switch_tick: number;
    ticks: number;
  };
}

/** The frozen message stream recorded from the real (offline) service. */
export function loadRecordedLog(): RecordedLog {
  const read = (name: string) =>
    fs.readFileSync(new URL(`./fixtures/${name}`, import.meta.url), 'utf-8');
  const messages = read('transition_log.jsonl')
    .split('\n')
    .filter((l) => l.trim() !== '')
    .map((l) => JSON.parse(l) as Record<string, unknown>);
  return {
    messages,
    frames: messages.filter((m) => m.type === 'frame') as unknown as FrameMessage[],
    meta: JSON.parse(read('meta.json')) as RecordedLog['meta'],
  };
}

/** Synthetic frame factory for tests that do not need the recorded log. */
export function makeFrame(t: number, over: Partial<FrameMessage> = {}): FrameMessage {
  return {
    type: 'frame',
    t,
    q: [0.1, 0.2, 0.3],
    phi: [0.25, -0.25, 0.0],
    f: [1.0, 2.0, 3.0],
    a: [0.5, 0.5, 0.5],
    b: [0.0, 0.0, 0.0],
    ...over,
  };
}
