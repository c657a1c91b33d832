/** Fixed-rate frame playback.
 *
 * Server actions arrive as bursts of frames; the player spaces them out
 * at a steady cadence (default 10 fps) so travel reads as motion. It
 * only ever delivers sources that were enqueued — frames are never
 * duplicated, dropped, or synthesized.
 */

export interface Timers {
  set(fn: () => void, ms: number): unknown;
  clear(handle: unknown): void;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
};

export class FramePlayer {
  private sink: (src: string) => void;
  private intervalMs: number;
  private timers: Timers;
  private queue: string[] = [];
  private handle: unknown = null;

  constructor(
    sink: (src: string) => void,
    intervalMs = 100,
    timers: Timers = realTimers,
  ) {
    this.sink = sink;
    this.intervalMs = intervalMs;
    this.timers = timers;
  }

  /** Append frames; playback starts immediately when idle. */
  enqueue(srcs: readonly string[]): void {
    this.queue.push(...srcs);
    if (this.handle === null) this.tick();
  }

  get pending(): number {
    return this.queue.length;
  }

  get playing(): boolean {
    return this.handle !== null;
  }

  /** Drop queued frames and cancel the pending tick. */
  stop(): void {
    if (this.handle !== null) this.timers.clear(this.handle);
    this.handle = null;
    this.queue.length = 0;
  }

  private tick = (): void => {
    const next = this.queue.shift();
    if (next === undefined) {
      this.handle = null;
      return;
    }
    this.sink(next);
    this.handle = this.timers.set(this.tick, this.intervalMs);
  };
}
