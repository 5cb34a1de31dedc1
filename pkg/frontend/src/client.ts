import type { CommandMessage } from './protocol.js';
import { asServerMessage } from './protocol.js';
import { RateLimitedSender } from './debounce.js';
import { UiSessionModel } from './session-model.js';

export const REPLAY_ENCODED = 'replay-encoded';
export const PROPAGATE_LATENT = 'propagate-latent';

/**
 * One line of JSON per send; the transport owns framing and the socket.
 * Tests drive the client through a scripted in-memory implementation.
 */
export interface Transport {
  send(line: string): void;
  onMessage(cb: (line: string) => void): void;
  onClose(cb: () => void): void;
  close(): void;
}

export interface StudioClientOptions {
  /** Minimum interval between freq_scale messages (20 msg/s at 50 ms). */
  sliderIntervalMs?: number;
  /** Delay before reconnecting after a drop; null disables auto-retry. */
  retryDelayMs?: number | null;
  diagnostic?: (msg: string) => void;
}

/**
 * The command side of the operator console. Every mutation of playback
 * goes through `send` as a documented protocol message; the model is
 * pure presentation state fed by `route`.
 */
export class StudioClient {
  readonly model: UiSessionModel;
  private transport: Transport | null = null;
  private nextId = 1;
  private transitionActive = false;
  private readonly slider: RateLimitedSender<number>;
  private readonly retryDelayMs: number | null;
  private readonly diagnostic: (msg: string) => void;
  private closed = false;

  constructor(
    private readonly connectTransport: () => Transport,
    opts: StudioClientOptions = {},
  ) {
    this.diagnostic = opts.diagnostic ?? ((m) => console.warn(m));
    this.retryDelayMs = opts.retryDelayMs === undefined ? 1000 : opts.retryDelayMs;
    this.model = new UiSessionModel(10.0, this.diagnostic);
    this.slider = new RateLimitedSender<number>(
      (value) => this.send({ type: 'freq_scale', value }),
      opts.sliderIntervalMs ?? 50,
    );
  }

  /** Open the transport and prime the view (motion list, model config). */
  connect(): void {
    this.model.setConnection('connecting');
    let transport: Transport;
    try {
      transport = this.connectTransport();
    } catch (e) {
      this.model.setConnection('disconnected', `connect failed: ${String(e)}`);
      this.scheduleRetry();
      return;
    }
    this.transport = transport;
    transport.onMessage((line) => this.route(line));
    transport.onClose(() => this.handleClose());
    this.model.setConnection('connected');
    this.send({ type: 'list_motions' });
    this.send({ type: 'get_config' });
  }

  close(): void {
    this.closed = true;
    this.slider.cancel();
    this.transport?.close();
    this.transport = null;
  }

  // -- UI actions ------------------------------------------------------------

  play(motion: string, mode: string = REPLAY_ENCODED): number {
    return this.send({ type: 'play', motion, mode });
  }

  stop(): number {
    return this.send({ type: 'stop' });
  }

  /**
   * "Transition to X now". One at a time: while one is in flight or its
   * blend is still streaming, further clicks are rejected locally and
   * never reach the wire.
   */
  transitionTo(target: string, durationS = 0.5): number | null {
    if (this.transitionActive || this.model.transitionInView) {
      this.model.notices.push(`transition to '${target}' ignored: one already active`);
      return null;
    }
    this.transitionActive = true;
    return this.send({ type: 'transition', target, duration_s: durationS });
  }

  /** Slider position; rate-limited, trailing value always delivered. */
  setFreqScale(value: number): void {
    this.slider.set(value);
  }

  setMode(mode: string): number {
    return this.send({ type: 'mode', value: mode });
  }

  requestState(): number {
    return this.send({ type: 'get_state' });
  }

  requestMotions(): number {
    return this.send({ type: 'list_motions' });
  }

  // -- internals ---------------------------------------------------------------

  private send(cmd: CommandMessage): number {
    const id = this.nextId++;
    const message = { ...cmd, id };
    this.model.recordSent(id, message);
    try {
      if (this.transport === null) throw new Error('not connected');
      this.transport.send(JSON.stringify(message));
    } catch (e) {
      this.model.markSendFailed(id);
      this.model.notices.push(`send failed for '${cmd.type}': ${String(e)}`);
      if (cmd.type === 'transition') this.transitionActive = false;
    }
    return id;
  }

  private route(line: string): void {
    let decoded: unknown;
    try {
      decoded = JSON.parse(line);
    } catch {
      this.diagnostic(`malformed line skipped: ${line.slice(0, 80)}`);
      return;
    }
    const msg = asServerMessage(decoded);
    if (msg === null) {
      this.diagnostic(`malformed message skipped: ${line.slice(0, 80)}`);
      return;
    }
    this.model.ingest(msg);
    if (msg.type === 'frame' && msg.blend_remaining_s === 0) {
      this.transitionActive = false;
    }
    if (msg.type === 'error' && msg.id !== undefined) {
      const echo = this.model.echoes.find((e) => e.id === msg.id);
      if (echo?.command.type === 'transition') this.transitionActive = false;
    }
  }

  private handleClose(): void {
    if (this.closed) return;
    this.transport = null;
    this.transitionActive = false;
    this.model.setConnection('disconnected', 'connection lost' +
      (this.retryDelayMs !== null ? ', retrying' : ''));
    this.scheduleRetry();
  }

  private scheduleRetry(): void {
    if (this.closed || this.retryDelayMs === null) return;
    setTimeout(() => {
      if (!this.closed && this.model.connection === 'disconnected') this.connect();
    }, this.retryDelayMs);
  }
}
