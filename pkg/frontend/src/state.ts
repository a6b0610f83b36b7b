/**
 * Local commentary cache with optimistic updates and server reconciliation.
 *
 * The store converges to snapshot ∪ broadcasts: a subscribe snapshot
 * resets it, every broadcast with seq > snapshot seq is applied exactly
 * once, and a detected gap flags the store for resubscription instead of
 * guessing. Optimistic entries render immediately and are replaced by the
 * server's copy on the originator's own broadcast (single code path) or
 * rolled back when the server rejects the request.
 */

import type { Annotation } from "./protocol.js";

export type SidebarOrder = "position" | "time" | "author";

export interface OptimisticEntry {
  requestId: string;
  annotation: Annotation;
}

export class CommentaryStore {
  private items = new Map<string, Annotation>();
  private optimistic = new Map<string, OptimisticEntry>();
  snapshotSeq = -1;
  lastSeq = -1;
  needsResync = false;
  order: SidebarOrder = "position";

  applySnapshot(seq: number, commentaries: Annotation[]): void {
    this.items = new Map(commentaries.map((a) => [a.id, a]));
    this.snapshotSeq = seq;
    this.lastSeq = seq;
    this.needsResync = false;
  }

  /** Returns false when the broadcast was ignored (stale or gap). */
  applyBroadcast(seq: number, annotation: Annotation): boolean {
    if (seq <= this.lastSeq) return false; // duplicate of snapshot content
    if (seq !== this.lastSeq + 1) {
      this.needsResync = true; // gap: resubscribe rather than guess
      return false;
    }
    this.lastSeq = seq;
    if (annotation.deleted) {
      this.items.delete(annotation.id);
    } else {
      this.items.set(annotation.id, annotation);
    }
    return true;
  }

  addOptimistic(requestId: string, annotation: Annotation): void {
    this.optimistic.set(requestId, { requestId, annotation });
  }

  /** Server answered the optimistic request: drop the provisional entry. */
  settleOptimistic(requestId: string): void {
    this.optimistic.delete(requestId);
  }

  /** Server rejected the request: the provisional entry disappears. */
  rollbackOptimistic(requestId: string): Annotation | undefined {
    const entry = this.optimistic.get(requestId);
    this.optimistic.delete(requestId);
    return entry?.annotation;
  }

  get(id: string): Annotation | undefined {
    return this.items.get(id);
  }

  /** Committed + provisional annotations, for rendering. */
  all(): Annotation[] {
    const committed = [...this.items.values()];
    const provisional = [...this.optimistic.values()]
      .map((e) => e.annotation)
      .filter((a) => !this.items.has(a.id));
    return [...committed, ...provisional];
  }

  /** Thread roots in the selected sidebar order. */
  sidebar(): Annotation[] {
    const roots = this.all().filter((a) => a.parentId === null);
    const by: Record<SidebarOrder, (a: Annotation, b: Annotation) => number> = {
      position: (a, b) =>
        positionKey(a) - positionKey(b) || a.createdAt - b.createdAt || cmp(a.id, b.id),
      time: (a, b) => a.createdAt - b.createdAt || cmp(a.id, b.id),
      author: (a, b) => cmp(a.userId, b.userId) || a.createdAt - b.createdAt || cmp(a.id, b.id),
    };
    return roots.sort(by[this.order]);
  }

  /** Replies of a root, oldest first (ties by id). */
  thread(rootId: string): Annotation[] {
    const members: Annotation[] = [];
    const frontier = [rootId];
    const seen = new Set(frontier);
    while (frontier.length) {
      const parent = frontier.shift()!;
      for (const a of this.all()) {
        if (a.parentId === parent && !seen.has(a.id)) {
          seen.add(a.id);
          members.push(a);
          frontier.push(a.id);
        }
      }
    }
    return members.sort((a, b) => a.createdAt - b.createdAt || cmp(a.id, b.id));
  }
}

function positionKey(a: Annotation): number {
  // Document-level commentaries sort after anchored ones.
  return a.selectors ? a.selectors.position.start : Number.MAX_SAFE_INTEGER;
}

function cmp(a: string, b: string): number {
  return a < b ? -1 : a > b ? 1 : 0;
}
