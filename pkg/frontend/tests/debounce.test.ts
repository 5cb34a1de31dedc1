import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { RateLimitedSender } from '../src/debounce.js';

describe('RateLimitedSender', () => {
  beforeEach(() => {
    vi.useFakeTimers({ toFake: ['setTimeout', 'clearTimeout', 'Date'] });
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it('sends the first value immediately', () => {
    const sent: number[] = [];
    const limiter = new RateLimitedSender<number>((v) => sent.push(v), 50);
    limiter.set(1.5);
    expect(sent).toEqual([1.5]);
  });

  it('parks values inside the interval and flushes the newest', () => {
    const sent: number[] = [];
    const limiter = new RateLimitedSender<number>((v) => sent.push(v), 50);
    limiter.set(1.0);
    limiter.set(1.1);
    limiter.set(1.2);
    expect(sent).toEqual([1.0]);
    expect(limiter.pending).toBe(true);
    vi.advanceTimersByTime(50);
    expect(sent).toEqual([1.0, 1.2]);
    expect(limiter.pending).toBe(false);
  });

  it('never exceeds one send per interval under constant wiggling', () => {
    const stamps: number[] = [];
    const limiter = new RateLimitedSender<number>(() => stamps.push(Date.now()), 50);
    // 500 slider moves over 1 s
    for (let i = 0; i < 500; i++) {
      limiter.set(Math.sin(i));
      vi.advanceTimersByTime(2);
    }
    vi.advanceTimersByTime(50); // trailing flush
    for (let i = 1; i < stamps.length; i++) {
      expect(stamps[i]! - stamps[i - 1]!).toBeGreaterThanOrEqual(50);
    }
    // 1 s of wiggling plus the trailing edge: at most 21 sends
    expect(stamps.length).toBeLessThanOrEqual(21);
    expect(stamps.length).toBeGreaterThan(10); // but it does keep sending
  });

  it('delivers the final slider position after the burst', () => {
    const sent: number[] = [];
    const limiter = new RateLimitedSender<number>((v) => sent.push(v), 50);
    for (let i = 0; i <= 30; i++) {
      limiter.set(i / 10);
      vi.advanceTimersByTime(1);
    }
    vi.advanceTimersByTime(50);
    expect(sent[sent.length - 1]).toBe(3.0);
  });

  it('cancel drops the parked value', () => {
    const sent: number[] = [];
    const limiter = new RateLimitedSender<number>((v) => sent.push(v), 50);
    limiter.set(1.0);
    limiter.set(2.0);
    limiter.cancel();
    vi.advanceTimersByTime(100);
    expect(sent).toEqual([1.0]);
    expect(limiter.pending).toBe(false);
  });

  it('a lone set after a quiet period is immediate again', () => {
    const sent: number[] = [];
    const limiter = new RateLimitedSender<number>((v) => sent.push(v), 50);
    limiter.set(1.0);
    vi.advanceTimersByTime(200);
    limiter.set(2.0);
    expect(sent).toEqual([1.0, 2.0]);
  });

  it('rejects a non-positive interval', () => {
    expect(() => new RateLimitedSender(() => undefined, 0)).toThrow(RangeError);
  });
});
