/** Commentary store: seq contract, optimistic entries, sidebar ordering. */

import { describe, expect, test } from "vitest";

import type { Annotation } from "../src/protocol.js";
import { CommentaryStore } from "../src/state.js";

function ann(partial: Partial<Annotation> & { id: string }): Annotation {
  return {
    documentId: "d1",
    userId: "u1",
    selectors: null,
    text: null,
    label: null,
    tags: [],
    createdAt: 0,
    updatedAt: 0,
    parentId: null,
    deleted: false,
    origin: "human",
    ...partial,
  };
}

function anchored(id: string, start: number, extra: Partial<Annotation> = {}): Annotation {
  return ann({
    id,
    selectors: {
      quote: { exact: "q", prefix: "", suffix: "" },
      position: { start, end: start + 1 },
      pageIndex: 0,
    },
    ...extra,
  });
}

describe("snapshot-then-stream contract", () => {
  test("broadcast continues from snapshot seq", () => {
    const store = new CommentaryStore();
    store.applySnapshot(5, [ann({ id: "a" })]);
    expect(store.applyBroadcast(6, ann({ id: "b" }))).toBe(true);
    expect(store.all().map((a) => a.id).sort()).toEqual(["a", "b"]);
  });

  test("duplicates of snapshot content are ignored", () => {
    const store = new CommentaryStore();
    store.applySnapshot(5, [ann({ id: "a" })]);
    expect(store.applyBroadcast(5, ann({ id: "a", text: "stale" }))).toBe(false);
    expect(store.get("a")!.text).toBeNull();
  });

  test("a gap flags resync instead of applying", () => {
    const store = new CommentaryStore();
    store.applySnapshot(5, []);
    expect(store.applyBroadcast(8, ann({ id: "x" }))).toBe(false);
    expect(store.needsResync).toBe(true);
    expect(store.get("x")).toBeUndefined();
  });

  test("delete broadcasts remove the annotation", () => {
    const store = new CommentaryStore();
    store.applySnapshot(1, [ann({ id: "a" })]);
    store.applyBroadcast(2, ann({ id: "a", deleted: true }));
    expect(store.get("a")).toBeUndefined();
  });
});

describe("optimistic entries", () => {
  test("render provisionally, settle on answer", () => {
    const store = new CommentaryStore();
    store.applySnapshot(0, []);
    store.addOptimistic("r1", ann({ id: "optimistic-r1", text: "mine" }));
    expect(store.all()).toHaveLength(1);
    store.applyBroadcast(1, ann({ id: "srv-1", text: "mine" }));
    store.settleOptimistic("r1");
    expect(store.all().map((a) => a.id)).toEqual(["srv-1"]);
  });

  test("rollback removes the provisional entry", () => {
    const store = new CommentaryStore();
    store.applySnapshot(0, []);
    store.addOptimistic("r1", ann({ id: "optimistic-r1" }));
    const rolled = store.rollbackOptimistic("r1");
    expect(rolled!.id).toBe("optimistic-r1");
    expect(store.all()).toHaveLength(0);
  });
});

describe("sidebar ordering", () => {
  const items = [
    anchored("late-pos", 50, { createdAt: 10, userId: "zoe" }),
    anchored("early-pos", 3, { createdAt: 30, userId: "amy" }),
    ann({ id: "doc-level", createdAt: 20, userId: "mia" }),
  ];

  function storeWith(order: "position" | "time" | "author") {
    const store = new CommentaryStore();
    store.applySnapshot(0, items);
    store.order = order;
    return store;
  }

  test("default text-position order, document-level last", () => {
    expect(storeWith("position").sidebar().map((a) => a.id)).toEqual([
      "early-pos",
      "late-pos",
      "doc-level",
    ]);
  });

  test("creation time order", () => {
    expect(storeWith("time").sidebar().map((a) => a.id)).toEqual([
      "late-pos",
      "doc-level",
      "early-pos",
    ]);
  });

  test("author order", () => {
    expect(storeWith("author").sidebar().map((a) => a.id)).toEqual([
      "early-pos",
      "doc-level",
      "late-pos",
    ]);
  });

  test("replies stay out of the sidebar roots", () => {
    const store = new CommentaryStore();
    store.applySnapshot(0, [
      ann({ id: "root" }),
      ann({ id: "re-b", parentId: "root", createdAt: 7 }),
      ann({ id: "re-a", parentId: "root", createdAt: 7 }),
      ann({ id: "re-c", parentId: "re-a", createdAt: 9 }),
    ]);
    expect(store.sidebar().map((a) => a.id)).toEqual(["root"]);
    expect(store.thread("root").map((a) => a.id)).toEqual(["re-a", "re-b", "re-c"]);
  });
});
