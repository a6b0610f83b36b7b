/**
 * Wire protocol v1 schemas (mirrors docs/protocol.md of the server repo).
 * zod validates every inbound frame before it can touch client state.
 */

import { z } from "zod";

export const PROTOCOL_VERSION = "v1";

export const QuoteSelector = z.object({
  exact: z.string().min(1),
  prefix: z.string(),
  suffix: z.string(),
});

export const PositionSelector = z.object({
  start: z.number().int().nonnegative(),
  end: z.number().int().positive(),
});

export const SelectorSet = z.object({
  quote: QuoteSelector,
  position: PositionSelector,
  pageIndex: z.number().int().nonnegative(),
});
export type SelectorSet = z.infer<typeof SelectorSet>;

export const Annotation = z.object({
  id: z.string(),
  documentId: z.string(),
  userId: z.string(),
  selectors: SelectorSet.nullable(),
  text: z.string().nullable(),
  label: z.string().nullable(),
  tags: z.array(z.string()),
  createdAt: z.number(),
  updatedAt: z.number(),
  parentId: z.string().nullable(),
  deleted: z.boolean(),
  origin: z.enum(["human", "assistant"]),
});
export type Annotation = z.infer<typeof Annotation>;

export const ServerFrame = z.object({
  type: z.enum(["ack", "auth_ok", "error", "comm_broadcast", "assist_response"]),
  request_id: z.string().optional(),
  seq: z.number().int().optional(),
  user_id: z.string().optional(),
  server_ts: z.number(),
  payload: z.record(z.string(), z.unknown()),
});
export type ServerFrame = z.infer<typeof ServerFrame>;

export const SnapshotPayload = z.object({
  documentId: z.string(),
  seq: z.number().int(),
  commentaries: z.array(Annotation),
});

export const BroadcastPayload = z.object({
  op: z.enum(["create", "update", "delete"]),
  annotation: Annotation,
});

export const AuthOkPayload = z.object({
  user_id: z.string(),
  username: z.string(),
  role: z.enum(["admin", "user"]),
  consent_given: z.boolean(),
  behavior_optin: z.boolean(),
});
export type AuthOk = z.infer<typeof AuthOkPayload>;

export type ClientFrame = {
  type:
    | "hello"
    | "auth"
    | "subscribe"
    | "unsubscribe"
    | "comm_create"
    | "comm_update"
    | "comm_delete"
    | "behavior_event"
    | "assist_request";
  request_id?: string;
  payload: Record<string, unknown>;
};

export type BehaviorEventType =
  | "doc_enter"
  | "doc_leave"
  | "page_view"
  | "comm_create"
  | "comm_edit"
  | "comm_delete"
  | "quickscroll_to_sidebar"
  | "quickscroll_to_highlight"
  | "button_click"
  | "text_selection";
