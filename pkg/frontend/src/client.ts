/**
 * Protocol client: one socket, strictly seq-ordered message handling,
 * request/response correlation, optimistic commentary operations.
 *
 * The transport is anything WebSocket-shaped (send/onmessage/close), so
 * tests drive the client through an in-memory pair and the browser passes
 * a real WebSocket.
 */

import {
  Annotation,
  AuthOk,
  AuthOkPayload,
  BroadcastPayload,
  ClientFrame,
  PROTOCOL_VERSION,
  SelectorSet,
  ServerFrame,
  SnapshotPayload,
} from "./protocol.js";
import { BehaviorEmitter } from "./behavior.js";
import { CommentaryStore } from "./state.js";

export interface Transport {
  send(data: string): void;
  close(): void;
  onMessage(handler: (data: string) => void): void;
}

type Pending = {
  resolve: (frame: ServerFrame) => void;
  reject: (err: Error) => void;
  optimistic?: boolean;
};

export class RequestFailed extends Error {
  readonly code: string;
  constructor(code: string, message: string) {
    super(`${code}: ${message}`);
    this.code = code;
  }
}

export class CareClient {
  readonly store = new CommentaryStore();
  behavior: BehaviorEmitter;
  user: AuthOk | null = null;
  documentId: string | null = null;
  private transport: Transport;
  private pending = new Map<string, Pending>();
  private counter = 0;
  private listeners = new Set<() => void>();

  constructor(transport: Transport) {
    this.transport = transport;
    this.behavior = new BehaviorEmitter(false, () => undefined);
    transport.onMessage((data) => this.onFrame(data));
  }

  /** Re-render hook for the UI layer. */
  onChange(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  private nextRequestId(): string {
    this.counter += 1;
    return `c${this.counter}`;
  }

  private sendFrame(frame: ClientFrame): void {
    this.transport.send(JSON.stringify(frame));
  }

  private request(type: ClientFrame["type"], payload: Record<string, unknown>): Promise<ServerFrame> {
    const request_id = this.nextRequestId();
    const promise = new Promise<ServerFrame>((resolve, reject) => {
      this.pending.set(request_id, { resolve, reject });
    });
    this.sendFrame({ type, request_id, payload });
    return promise;
  }

  private onFrame(data: string): void {
    const frame = ServerFrame.parse(JSON.parse(data));
    if (frame.type === "comm_broadcast") {
      const { op, annotation } = BroadcastPayload.parse(frame.payload);
      void op;
      this.store.applyBroadcast(frame.seq!, annotation);
      this.notify();
      return;
    }
    if (frame.request_id !== undefined) {
      const pending = this.pending.get(frame.request_id);
      if (pending) {
        this.pending.delete(frame.request_id);
        if (frame.type === "error") {
          const code = String(frame.payload.code ?? "error");
          const message = String(frame.payload.message ?? "");
          this.store.rollbackOptimistic(frame.request_id);
          this.notify();
          pending.reject(new RequestFailed(code, message));
        } else {
          this.store.settleOptimistic(frame.request_id);
          pending.resolve(frame);
        }
      }
    }
  }

  async hello(): Promise<void> {
    await this.request("hello", { protocol_version: PROTOCOL_VERSION });
  }

  async login(username: string, password: string): Promise<AuthOk> {
    const reply = await this.request("auth", { username, password });
    this.user = AuthOkPayload.parse(reply.payload);
    // The emitter is constructed from the server-confirmed opt-in flag;
    // without opt-in it never creates an event object at all.
    this.behavior = new BehaviorEmitter(this.user.behavior_optin, (event) => {
      this.sendFrame({
        type: "behavior_event",
        request_id: this.nextRequestId(),
        payload: {
          type: event.type,
          documentId: event.documentId,
          clientTs: event.clientTs,
          payload: event.payload,
        },
      });
    });
    return this.user;
  }

  async subscribe(documentId: string): Promise<number> {
    const reply = await this.request("subscribe", { documentId });
    const snapshot = SnapshotPayload.parse(reply.payload);
    this.store.applySnapshot(snapshot.seq, snapshot.commentaries);
    this.documentId = documentId;
    this.behavior.docEnter(documentId);
    this.notify();
    return snapshot.seq;
  }

  /** Gap detected: fetch a fresh snapshot (exactly-once view preserved). */
  async resync(): Promise<void> {
    if (this.documentId && this.store.needsResync) {
      await this.subscribe(this.documentId);
    }
  }

  async createCommentary(input: {
    selectors?: SelectorSet | null;
    text?: string | null;
    label?: string | null;
    tags?: string[];
    parentId?: string | null;
  }): Promise<Annotation> {
    if (!this.documentId || !this.user) throw new Error("subscribe first");
    const request_id = this.nextRequestId();
    const provisional: Annotation = {
      id: `optimistic-${request_id}`,
      documentId: this.documentId,
      userId: this.user.user_id,
      selectors: input.selectors ?? null,
      text: input.text ?? null,
      label: input.label ?? null,
      tags: input.tags ?? [],
      createdAt: Date.now(),
      updatedAt: Date.now(),
      parentId: input.parentId ?? null,
      deleted: false,
      origin: "human",
    };
    this.store.addOptimistic(request_id, provisional);
    this.notify();
    const promise = new Promise<ServerFrame>((resolve, reject) => {
      this.pending.set(request_id, { resolve, reject, optimistic: true });
    });
    this.sendFrame({
      type: "comm_create",
      request_id,
      payload: {
        documentId: this.documentId,
        selectors: input.selectors ?? null,
        text: input.text ?? null,
        label: input.label ?? null,
        tags: input.tags ?? [],
        parentId: input.parentId ?? null,
      },
    });
    const reply = await promise;
    this.behavior.emit("comm_create", this.documentId, {
      commentary_id: (reply.payload.annotation as Annotation).id,
    });
    return Annotation.parse(reply.payload.annotation);
  }

  async updateCommentary(
    commentaryId: string,
    fields: { text?: string | null; label?: string | null; tags?: string[] },
  ): Promise<Annotation> {
    const reply = await this.request("comm_update", { commentaryId, ...fields });
    if (this.documentId) this.behavior.emit("comm_edit", this.documentId, { commentary_id: commentaryId });
    return Annotation.parse(reply.payload.annotation);
  }

  async deleteCommentary(commentaryId: string): Promise<void> {
    await this.request("comm_delete", { commentaryId });
    if (this.documentId) this.behavior.emit("comm_delete", this.documentId, { commentary_id: commentaryId });
  }

  async requestAssist(input: {
    skillId: string;
    inputs: Record<string, unknown>;
    commentaryId?: string;
  }): Promise<Record<string, unknown>> {
    const reply = await this.request("assist_request", {
      skillId: input.skillId,
      inputs: input.inputs,
      documentId: this.documentId,
      commentaryId: input.commentaryId ?? null,
    });
    return reply.payload.output as Record<string, unknown>;
  }

  close(): void {
    if (this.documentId) this.behavior.docLeave(this.documentId);
    this.transport.close();
  }
}
