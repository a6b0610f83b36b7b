/**
 * Opt-in behavioral event emitter.
 *
 * When the user has not opted in, the emitter is fully disabled: no event
 * object is created and nothing ever reaches the transport. Events are
 * batched and flushed at most one second after the first queued event
 * (and on demand), all over the existing connection.
 */

import type { BehaviorEventType } from "./protocol.js";

export interface QueuedEvent {
  type: BehaviorEventType;
  documentId: string;
  clientTs: number;
  payload: Record<string, unknown>;
}

export type SendFrame = (event: QueuedEvent) => void;

export const FLUSH_INTERVAL_MS = 1000;

type Timer = ReturnType<typeof setTimeout>;

export class BehaviorEmitter {
  readonly enabled: boolean;
  private queue: QueuedEvent[] = [];
  private timer: Timer | null = null;
  private readonly send: SendFrame;
  private readonly now: () => number;

  constructor(optedIn: boolean, send: SendFrame, now: () => number = Date.now) {
    this.enabled = optedIn;
    this.send = send;
    this.now = now;
  }

  emit(type: BehaviorEventType, documentId: string, payload: Record<string, unknown> = {}): void {
    if (!this.enabled) return; // opt-out: nothing leaves the browser
    this.queue.push({ type, documentId, clientTs: this.now(), payload });
    if (this.timer === null) {
      this.timer = setTimeout(() => this.flush(), FLUSH_INTERVAL_MS);
    }
  }

  docEnter(documentId: string): void {
    this.emit("doc_enter", documentId);
  }

  docLeave(documentId: string): void {
    this.emit("doc_leave", documentId);
    this.flush(); // leaving is the last chance to deliver
  }

  pageView(documentId: string, pageIndex: number): void {
    this.emit("page_view", documentId, { page_index: pageIndex });
  }

  buttonClick(documentId: string, buttonId: string): void {
    this.emit("button_click", documentId, { button_id: buttonId });
  }

  quickScroll(documentId: string, direction: "to_sidebar" | "to_highlight"): void {
    this.emit(
      direction === "to_sidebar" ? "quickscroll_to_sidebar" : "quickscroll_to_highlight",
      documentId,
    );
  }

  flush(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    const pending = this.queue;
    this.queue = [];
    for (const event of pending) {
      this.send(event);
    }
  }

  get pendingCount(): number {
    return this.queue.length;
  }
}
