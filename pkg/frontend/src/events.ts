import type { ApiClient } from "./api";
import type { ItemEvent } from "./types";

export type EventHandler = (event: ItemEvent) => void;

export interface WatcherOptions {
  /** Polling cadence in ms (polling transport). */
  intervalMs?: number;
  /** Reconnect backoff in ms after a dropped poll/stream. */
  reconnectMs?: number;
  /** Injectable timer, for tests. */
  setTimer?: (fn: () => void, ms: number) => unknown;
}

/**
 * Live per-item event feed with reconnect and replay de-duplication.
 *
 * The server assigns monotonically increasing event ids per item; the
 * watcher remembers the highest id it has delivered and asks only for the
 * tail on every poll or reconnect, so consumers observe each event exactly
 * once regardless of connection drops. The feed stops once a terminal
 * stage-change (Done/Failed) has been delivered and the tail is drained.
 */
export class ItemEventWatcher {
  private lastId = 0;
  private stopped = false;
  private finished = false;
  private consecutiveFailures = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly itemId: string,
    private readonly onEvent: EventHandler,
    private readonly options: WatcherOptions = {},
    private readonly onStateChange?: (state: "live" | "reconnecting" | "closed") => void,
  ) {}

  get lastEventId(): number {
    return this.lastId;
  }

  start(): void {
    this.stopped = false;
    void this.pollLoop();
  }

  stop(): void {
    this.stopped = true;
    this.onStateChange?.("closed");
  }

  private schedule(fn: () => void, ms: number): void {
    const timer = this.options.setTimer ?? ((f: () => void, m: number) => setTimeout(f, m));
    timer(fn, ms);
  }

  /** One poll step; exposed for deterministic tests. */
  async pollOnce(): Promise<boolean> {
    try {
      const { events } = await this.api.fetchEvents(this.itemId, this.lastId);
      this.consecutiveFailures = 0;
      this.onStateChange?.("live");
      for (const event of events) {
        if (event.id <= this.lastId) continue; // replayed duplicate
        this.lastId = event.id;
        this.onEvent(event);
        if (
          event.type === "stage_changed" &&
          (event.data["stage"] === "Done" || event.data["stage"] === "Failed")
        ) {
          this.finished = true;
        }
      }
      if (this.finished && events.length === 0) {
        this.stop();
        return false;
      }
      return true;
    } catch {
      this.consecutiveFailures += 1;
      this.onStateChange?.("reconnecting");
      return true;
    }
  }

  private async pollLoop(): Promise<void> {
    if (this.stopped) return;
    const keepGoing = await this.pollLoop_step();
    if (!keepGoing || this.stopped) return;
    const base = this.options.intervalMs ?? 400;
    const backoff = this.options.reconnectMs ?? 1000;
    const delay = this.consecutiveFailures > 0 ? backoff : base;
    this.schedule(() => void this.pollLoop(), delay);
  }

  private pollLoop_step(): Promise<boolean> {
    return this.pollOnce();
  }
}
