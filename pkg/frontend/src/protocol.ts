/**
 * Wire types for the playback service: newline-delimited JSON, commands in,
 * acknowledgments / replies / frames out. Field names match the service
 * exactly; this file is the only place they are spelled out.
 */

export type CommandMessage =
  | { type: 'play'; motion: string; mode?: string; id?: number }
  | { type: 'stop'; id?: number }
  | { type: 'transition'; target: string; duration_s?: number; id?: number }
  | { type: 'freq_scale'; value: number; id?: number }
  | { type: 'mode'; value: string; id?: number }
  | { type: 'list_motions'; id?: number }
  | { type: 'get_config'; id?: number }
  | { type: 'get_state'; id?: number };

export interface FrameMessage {
  type: 'frame';
  /** Stream time in seconds; strictly increasing for a service lifetime. */
  t: number;
  /** Decoded joint values, one per channel. */
  q: number[];
  /** Latent phases in cycles, wrapped to [-0.5, 0.5). */
  phi: number[];
  f: number[];
  a: number[];
  b: number[];
  /** Present only while a transition blend is active; 0 on its last frame. */
  blend_remaining_s?: number;
}

export interface AckMessage {
  type: 'ack';
  command: string;
  ok: boolean;
  id?: number;
}

export interface ErrorMessage {
  type: 'error';
  message: string;
  id?: number;
}

export interface MotionsMessage {
  type: 'motions';
  motions: string[];
  id?: number;
}

export interface ConfigMessage {
  type: 'config';
  d: number;
  c: number;
  window: number;
  dt: number;
  hidden: number;
  kernel: number;
  horizon: number;
  id?: number;
}

export interface StateMessage {
  type: 'state';
  playing: boolean;
  motion?: string;
  mode?: string;
  cursor?: number;
  freq_scale?: number;
  transition_active?: boolean;
  id?: number;
}

export interface DropReportMessage {
  type: 'drop_report';
  dropped_total: number;
}

export type ServerMessage =
  | FrameMessage
  | AckMessage
  | ErrorMessage
  | MotionsMessage
  | ConfigMessage
  | StateMessage
  | DropReportMessage;

function isNumberArray(v: unknown): v is number[] {
  return Array.isArray(v) && v.every((x) => typeof x === 'number' && Number.isFinite(x));
}

/** Narrow an arbitrary decoded JSON value to a frame, or null if malformed. */
export function asFrame(msg: unknown): FrameMessage | null {
  if (typeof msg !== 'object' || msg === null) return null;
  const m = msg as Record<string, unknown>;
  if (m.type !== 'frame') return null;
  if (typeof m.t !== 'number' || !Number.isFinite(m.t)) return null;
  for (const key of ['q', 'phi', 'f', 'a', 'b']) {
    if (!isNumberArray(m[key])) return null;
  }
  if ('blend_remaining_s' in m && typeof m.blend_remaining_s !== 'number') return null;
  return msg as FrameMessage;
}

/** Loose server-message check: an object with a string type tag. */
export function asServerMessage(msg: unknown): ServerMessage | null {
  if (typeof msg !== 'object' || msg === null) return null;
  const t = (msg as Record<string, unknown>).type;
  if (typeof t !== 'string') return null;
  if (t === 'frame') return asFrame(msg);
  return msg as ServerMessage;
}
