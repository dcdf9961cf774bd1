import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { ItemEventWatcher } from "../src/events";
import type { ItemEvent } from "../src/types";
import { StubService } from "./stub_service";

function watcherFor(
  stub: StubService,
  id: string,
  seen: ItemEvent[],
  states: string[] = [],
): ItemEventWatcher {
  const api = new ApiClient("", stub.fetch);
  return new ItemEventWatcher(
    api,
    id,
    (event) => seen.push(event),
    { setTimer: () => 0 }, // tests drive pollOnce() directly
    (state) => states.push(state),
  );
}

describe("ItemEventWatcher", () => {
  it("delivers events in order", async () => {
    const stub = new StubService();
    stub.addItem({ id: "w-1" });
    stub.pushEvent("w-1", "compile_started");
    stub.pushEvent("w-1", "compile_finished", { failed: false });
    const seen: ItemEvent[] = [];
    const watcher = watcherFor(stub, "w-1", seen);
    await watcher.pollOnce();
    expect(seen.map((e) => e.type)).toEqual(["compile_started", "compile_finished"]);
    expect(watcher.lastEventId).toBe(2);
  });

  it("survives a dropped connection and replays without duplicates", async () => {
    const stub = new StubService();
    stub.addItem({ id: "w-1" });
    stub.pushEvent("w-1", "e1");
    stub.pushEvent("w-1", "e2");
    const seen: ItemEvent[] = [];
    const states: string[] = [];
    const watcher = watcherFor(stub, "w-1", seen, states);
    await watcher.pollOnce(); // sees 1, 2

    stub.failNextRequests = 2; // drop the stream
    await watcher.pollOnce();
    await watcher.pollOnce();
    expect(states).toContain("reconnecting");

    stub.pushEvent("w-1", "e3");
    stub.pushEvent("w-1", "e4");
    await watcher.pollOnce(); // reconnected; server replays the tail only
    const ids = seen.map((e) => e.id);
    expect(ids).toEqual([1, 2, 3, 4]);
    expect(new Set(ids).size).toBe(ids.length);
  });

  it("ignores duplicate ids even if the server replays from zero", async () => {
    const stub = new StubService();
    stub.addItem({ id: "w-1" });
    stub.pushEvent("w-1", "e1");
    const seen: ItemEvent[] = [];
    const watcher = watcherFor(stub, "w-1", seen);
    await watcher.pollOnce();
    // A naive server replaying everything is still deduplicated client-side.
    const api = new ApiClient("", stub.fetch);
    const everything = await api.fetchEvents("w-1", 0);
    expect(everything.events).toHaveLength(1);
    await watcher.pollOnce();
    expect(seen).toHaveLength(1);
  });

  it("closes cleanly once the item reaches Done and the tail is drained", async () => {
    const stub = new StubService();
    stub.addItem({ id: "w-1" });
    stub.pushEvent("w-1", "compile_finished", { failed: false });
    stub.setStage("w-1", "Done");
    const seen: ItemEvent[] = [];
    const states: string[] = [];
    const watcher = watcherFor(stub, "w-1", seen, states);
    await watcher.pollOnce();
    const keepGoing = await watcher.pollOnce();
    expect(keepGoing).toBe(false);
    expect(states.at(-1)).toBe("closed");
    expect(seen.at(-1)?.data["stage"]).toBe("Done");
  });
});
