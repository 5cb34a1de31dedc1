import type {
  CommandMessage,
  ConfigMessage,
  FrameMessage,
  ServerMessage,
  StateMessage,
} from './protocol.js';
import { FrameBuffer } from './ring-buffer.js';

export type ConnectionState = 'connecting' | 'connected' | 'disconnected';

export type EchoStatus = 'pending' | 'acked' | 'rejected' | 'failed';

/** One sent command and what became of it; the log pane renders these. */
export interface CommandEcho {
  id: number;
  command: CommandMessage;
  status: EchoStatus;
  /** Server reply (ack, error, or query result) once one arrived. */
  response?: ServerMessage;
}

export interface DialState {
  /** Phase as a dial angle in radians: streamed phi (cycles) times 2*pi. */
  angleRad: number;
  freq: number;
  amp: number;
  offset: number;
}

export interface BlendedInterval {
  startT: number;
  endT: number;
  frameCount: number;
}

/** Chart series render-decimated every 2nd frame above this stream rate. */
const DECIMATION_THRESHOLD_HZ = 50;

/**
 * All state behind the operator console: nothing here talks to a socket,
 * which is what lets the whole UI test against a recorded frame log.
 */
export class UiSessionModel {
  motions: string[] = [];
  connection: ConnectionState = 'connecting';
  readonly buffer: FrameBuffer;
  echoes: CommandEcho[] = [];
  /** Local rejections and connection banners, newest last. */
  notices: string[] = [];
  config: ConfigMessage | null = null;
  lastState: StateMessage | null = null;
  droppedTotal = 0;

  constructor(
    bufferHorizonS = 10.0,
    private readonly diagnostic: (msg: string) => void = (m) => console.warn(m),
  ) {
    this.buffer = new FrameBuffer(bufferHorizonS);
  }

  /** Route one well-formed server message into view state. */
  ingest(msg: ServerMessage): void {
    switch (msg.type) {
      case 'frame':
        if (!this.buffer.push(msg)) {
          this.diagnostic(`frame with non-increasing t=${msg.t} skipped`);
        }
        return;
      case 'motions':
        this.motions = msg.motions;
        this.resolveEcho(msg.id, 'acked', msg);
        return;
      case 'config':
        this.config = msg;
        this.resolveEcho(msg.id, 'acked', msg);
        return;
      case 'state':
        this.lastState = msg;
        this.resolveEcho(msg.id, 'acked', msg);
        return;
      case 'ack':
        this.resolveEcho(msg.id, 'acked', msg);
        return;
      case 'error':
        if (msg.id !== undefined) this.resolveEcho(msg.id, 'rejected', msg);
        else this.notices.push(`service error: ${msg.message}`);
        return;
      case 'drop_report':
        this.droppedTotal = msg.dropped_total;
        return;
    }
  }

  recordSent(id: number, command: CommandMessage): void {
    this.echoes.push({ id, command, status: 'pending' });
  }

  markSendFailed(id: number): void {
    this.resolveEcho(id, 'failed');
  }

  private resolveEcho(id: number | undefined, status: EchoStatus, response?: ServerMessage): void {
    if (id === undefined) return;
    const echo = this.echoes.find((e) => e.id === id);
    if (echo === undefined) return;
    echo.status = status;
    if (response !== undefined) echo.response = response;
  }

  /** Latest latent parameters as dial positions; empty before any frame. */
  dials(): DialState[] {
    const frame = this.buffer.newest();
    if (frame === undefined) return [];
    return frame.phi.map((phi, i) => ({
      angleRad: phi * 2 * Math.PI,
      freq: frame.f[i] ?? 0,
      amp: frame.a[i] ?? 0,
      offset: frame.b[i] ?? 0,
    }));
  }

  /**
   * Strip-chart series for one joint. Rendering decimates to every 2nd
   * frame above 50 Hz display load; anything checking correctness should
   * read `buffer` directly, which stays undecimated.
   */
  chartSeries(joint: number): { t: number[]; y: number[] } {
    const frames = this.buffer.toArray();
    const rate = this.config !== null ? 1 / this.config.dt : this.inferRate(frames);
    const stride = rate > DECIMATION_THRESHOLD_HZ ? 2 : 1;
    const t: number[] = [];
    const y: number[] = [];
    for (let i = 0; i < frames.length; i += stride) {
      const fr = frames[i]!;
      t.push(fr.t);
      y.push(fr.q[joint] ?? NaN);
    }
    return { t, y };
  }

  /**
   * The contiguous run of frames carrying a blend countdown, from the
   * undecimated buffer. Null when no transition is in view. frameCount
   * times dt is the blend duration the stream actually exhibited.
   */
  blendedInterval(): BlendedInterval | null {
    const frames = this.buffer.toArray();
    let start = -1;
    let end = -1;
    for (let i = 0; i < frames.length; i++) {
      if (frames[i]!.blend_remaining_s !== undefined) {
        if (start < 0) start = i;
        end = i;
      }
    }
    if (start < 0) return null;
    return {
      startT: frames[start]!.t,
      endT: frames[end]!.t,
      frameCount: end - start + 1,
    };
  }

  /** True while the newest frame is still inside a blend. */
  get transitionInView(): boolean {
    const last = this.buffer.newest();
    return last?.blend_remaining_s !== undefined && last.blend_remaining_s > 0;
  }

  setConnection(state: ConnectionState, banner?: string): void {
    this.connection = state;
    if (banner !== undefined) this.notices.push(banner);
  }

  private inferRate(frames: FrameMessage[]): number {
    if (frames.length < 2) return 0;
    const first = frames[0]!;
    const last = frames[frames.length - 1]!;
    return (frames.length - 1) / (last.t - first.t);
  }
}
