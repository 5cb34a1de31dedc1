/**
 * Rate limiter for continuous controls (the frequency-scale slider).
 * Leading edge fires immediately; while inside the minimum interval the
 * newest value is parked and flushed when the interval expires, so the
 * receiver always ends up with the final slider position and never sees
 * more than one message per interval.
 */
export class RateLimitedSender<T> {
  private lastSentAt = -Infinity;
  private parked: { value: T } | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly send: (value: T) => void,
    readonly minIntervalMs: number = 50,
  ) {
    if (!(minIntervalMs > 0)) throw new RangeError('minIntervalMs must be positive');
  }

  set(value: T): void {
    const now = Date.now();
    if (this.timer === null && now - this.lastSentAt >= this.minIntervalMs) {
      this.lastSentAt = now;
      this.send(value);
      return;
    }
    this.parked = { value };
    if (this.timer === null) {
      const wait = Math.max(0, this.lastSentAt + this.minIntervalMs - now);
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  /** True while a trailing-edge send is pending. */
  get pending(): boolean {
    return this.parked !== null;
  }

  private flush(): void {
    this.timer = null;
    if (this.parked === null) return;
    const { value } = this.parked;
    this.parked = null;
    this.lastSentAt = Date.now();
    this.send(value);
  }

  /** Cancel any parked value without sending it. */
  cancel(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.parked = null;
  }
}
