/** Behavior emitter: hard opt-in gate, batching, event payloads. */

import { afterEach, beforeEach, describe, expect, test, vi } from "vitest";

import { BehaviorEmitter, FLUSH_INTERVAL_MS, QueuedEvent } from "../src/behavior.js";

describe("opt-in gate", () => {
  test("opt-out emitter never calls the transport", () => {
    const sent: QueuedEvent[] = [];
    const emitter = new BehaviorEmitter(false, (e) => sent.push(e));
    emitter.docEnter("d1");
    emitter.pageView("d1", 3);
    emitter.buttonClick("d1", "order-toggle");
    emitter.docLeave("d1");
    emitter.flush();
    expect(sent).toHaveLength(0);
    expect(emitter.pendingCount).toBe(0);
  });
});

describe("batching", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  test("events flush within one second of the first queued", () => {
    const sent: QueuedEvent[] = [];
    const emitter = new BehaviorEmitter(true, (e) => sent.push(e));
    emitter.pageView("d1", 0);
    emitter.pageView("d1", 1);
    expect(sent).toHaveLength(0);
    vi.advanceTimersByTime(FLUSH_INTERVAL_MS);
    expect(sent).toHaveLength(2);
  });

  test("doc_leave flushes immediately", () => {
    const sent: QueuedEvent[] = [];
    const emitter = new BehaviorEmitter(true, (e) => sent.push(e));
    emitter.pageView("d1", 0);
    emitter.docLeave("d1");
    expect(sent.map((e) => e.type)).toEqual(["page_view", "doc_leave"]);
  });

  test("scrolling through nine pages emits nine indexed views", () => {
    const sent: QueuedEvent[] = [];
    const emitter = new BehaviorEmitter(true, (e) => sent.push(e));
    for (let page = 0; page < 9; page++) emitter.pageView("d1", page);
    emitter.flush();
    const views = sent.filter((e) => e.type === "page_view");
    expect(views).toHaveLength(9);
    expect(views.map((e) => e.payload.page_index)).toEqual([0, 1, 2, 3, 4, 5, 6, 7, 8]);
  });

  test("quickscroll directions map to distinct event types", () => {
    const sent: QueuedEvent[] = [];
    const emitter = new BehaviorEmitter(true, (e) => sent.push(e));
    emitter.quickScroll("d1", "to_sidebar");
    emitter.quickScroll("d1", "to_highlight");
    emitter.flush();
    expect(sent.map((e) => e.type)).toEqual([
      "quickscroll_to_sidebar",
      "quickscroll_to_highlight",
    ]);
  });
});
