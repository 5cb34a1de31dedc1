import type { FrameMessage } from './protocol.js';

/**
 * Time-bounded frame buffer: holds exactly the trailing `horizonS` seconds
 * of the stream. Eviction is by timestamp, not count, so it is correct at
 * any stream rate. Ingest enforces the monotone-time invariant by dropping
 * frames whose t does not advance.
 */
export class FrameBuffer {
  private frames: FrameMessage[] = [];
  private start = 0; // index of the oldest live frame; compacted lazily

  constructor(readonly horizonS: number = 10.0) {
    if (!(horizonS > 0)) throw new RangeError(`horizon must be positive, got ${horizonS}`);
  }

  /** Returns false when the frame was dropped (non-monotone t). */
  push(frame: FrameMessage): boolean {
    const last = this.newest();
    if (last !== undefined && frame.t <= last.t) return false;
    this.frames.push(frame);
    // Wire timestamps are quantized to 9 decimals; half a quantum of slack
    // keeps the eviction boundary immune to float rounding in t - horizon.
    const cutoff = frame.t - this.horizonS + 5e-10;
    while (this.frames[this.start]!.t <= cutoff) this.start++;
    // Amortized compaction keeps memory proportional to the live window.
    if (this.start > 4096 && this.start * 2 > this.frames.length) {
      this.frames = this.frames.slice(this.start);
      this.start = 0;
    }
    return true;
  }

  get size(): number {
    return this.frames.length - this.start;
  }

  newest(): FrameMessage | undefined {
    return this.frames[this.frames.length - 1];
  }

  oldest(): FrameMessage | undefined {
    return this.frames[this.start];
  }

  /** Oldest-to-newest snapshot of the live window. */
  toArray(): FrameMessage[] {
    return this.frames.slice(this.start);
  }

  clear(): void {
    this.frames = [];
    this.start = 0;
  }
}
