/**
 * Scripted two-client session against the protocol-faithful mock server:
 * creations in one client appear in the other without any reload, caches
 * converge after quiescence, rejections roll back optimistic entries, and
 * an opt-out session puts zero behavior frames on the wire.
 */

import { describe, expect, test } from "vitest";

import { describe as computeSelectors } from "../src/anchoring.js";
import { CareClient, RequestFailed } from "../src/client.js";
import { MockServer } from "./mock_server.js";

const PAGE = "The quick brown fox jumps over the lazy dog, twice over.";

async function twoClients(server: MockServer, optinA = true, optinB = false) {
  server.addUser("ada", optinA);
  server.addUser("berta", optinB);
  server.addDocument("d1");
  const transportA = server.connect();
  const transportB = server.connect();
  const a = new CareClient(transportA);
  const b = new CareClient(transportB);
  for (const [client, name] of [
    [a, "ada"],
    [b, "berta"],
  ] as const) {
    await client.hello();
    await client.login(name, "pw");
    await client.subscribe("d1");
  }
  return { a, b, sessionA: transportA.sessionId, sessionB: transportB.sessionId };
}

function liveIds(client: CareClient): string[] {
  return client.store
    .all()
    .map((x) => x.id)
    .sort();
}

describe("two-client scripted session", () => {
  test("commentary created in one client is visible in the other without reload", async () => {
    const server = new MockServer();
    const { a, b } = await twoClients(server);
    const selectors = computeSelectors(PAGE, 4, 15);
    const created = await a.createCommentary({ selectors, text: "why brown?" });
    expect(b.store.get(created.id)?.text).toBe("why brown?");
    // The quoted text still matches the document at the stored position:
    // exactly the condition for a server-side position-verified anchor
    // (score 1.0).
    const echo = b.store.get(created.id)!.selectors!;
    expect(Array.from(PAGE).slice(echo.position.start, echo.position.end).join("")).toBe(
      echo.quote.exact,
    );
  });

  test("caches converge across create, reply, update, delete", async () => {
    const server = new MockServer();
    const { a, b } = await twoClients(server);
    const root = await a.createCommentary({ text: "root note" });
    const reply = await b.createCommentary({ text: "reply!", parentId: root.id });
    await a.updateCommentary(root.id, { text: "root note v2" });
    expect(liveIds(a)).toEqual(liveIds(b));
    expect(b.store.get(root.id)!.text).toBe("root note v2");
    expect(a.store.thread(root.id).map((x) => x.id)).toEqual([reply.id]);
    await b.deleteCommentary(reply.id);
    expect(liveIds(a)).toEqual([root.id]);
    expect(liveIds(a)).toEqual(liveIds(b));
  });

  test("server rejection rolls back the optimistic entry", async () => {
    const server = new MockServer();
    const { a, b } = await twoClients(server);
    server.rejectNext("validation-failed");
    await expect(a.createCommentary({ text: "doomed" })).rejects.toThrow(RequestFailed);
    expect(liveIds(a)).toEqual([]);
    expect(liveIds(b)).toEqual([]);
  });

  test("a missed broadcast triggers resync and the caches still converge", async () => {
    const server = new MockServer();
    const { a, b, sessionB } = await twoClients(server);
    await a.createCommentary({ text: "first" });
    server.dropNextBroadcastTo(sessionB);
    await a.createCommentary({ text: "second (lost for b)" });
    await a.createCommentary({ text: "third" });
    expect(b.store.needsResync).toBe(true);
    await b.resync();
    expect(liveIds(b)).toEqual(liveIds(a));
  });

  test("opt-out session emits zero behavior frames", async () => {
    const server = new MockServer();
    const { a, b } = await twoClients(server, true, false);
    // berta (opt-out) interacts heavily...
    b.behavior.pageView("d1", 1);
    b.behavior.quickScroll("d1", "to_sidebar");
    await b.createCommentary({ text: "note" });
    b.behavior.flush();
    b.close();
    const bertaFrames = server.behaviorFrames.filter((f: any) => f.userId === "u-berta");
    expect(server.behaviorFrames.every((f: any) => f.type !== undefined)).toBe(true);
    expect(bertaFrames).toHaveLength(0);
    // ...while ada (opt-in) produces frames, including doc_enter from subscribe.
    a.behavior.pageView("d1", 0);
    await a.createCommentary({ text: "ada's note" });
    a.behavior.flush();
    a.close();
    const types = server.behaviorFrames.map((f: any) => f.type);
    expect(types).toContain("doc_enter");
    expect(types).toContain("page_view");
    expect(types).toContain("comm_create");
    expect(types).toContain("doc_leave");
  });

  test("assist responses resolve the pending request", async () => {
    const server = new MockServer();
    server.assistHandler = (payload: any) => ({ label_id: "question", score: 1.0 });
    const { a } = await twoClients(server);
    const output = await a.requestAssist({
      skillId: "comment-label",
      inputs: { text: "references?", span: "", tags: [] },
    });
    expect(output).toEqual({ label_id: "question", score: 1.0 });
  });
});
