"""Real-time protocol core: sessions, subscriptions, CRUD broadcast, assists.

Sans-io, like the broker: the WebSocket adapter feeds one decoded client
message at a time into handle() and ships the returned (session, frame)
pairs. All calls are serialized by the adapter, which makes the hub the
single logical writer per document and gives every broadcast a total
per-document order (the seq assigned by storage in the same transaction
as the write).

Client visibility contract: a subscribe answer carries the full live
commentary set and the current seq; afterwards the session receives every
broadcast with a higher seq exactly once, including those triggered by
its own requests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from care import broker as broker_mod
from care.anchoring import SelectorError
from care.broker import Broker, JobOutcome, WorkerSend
from care.exporting import annotation_json
from care.models import Millis, Origin, Role, User, new_id, now_ms
from care.storage import (
    MalformedEvent,
    NotFound,
    PermissionDenied,
    Storage,
    ValidationFailed,
    selectors_from_json,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "v1"

CLIENT_TYPES = {
    "hello",
    "auth",
    "subscribe",
    "unsubscribe",
    "comm_create",
    "comm_update",
    "comm_delete",
    "behavior_event",
    "assist_request",
}


class Outbound(NamedTuple):
    session_id: str
    message: dict


@dataclass(slots=True)
class Session:
    session_id: str
    opened_at: Millis
    user: User | None = None
    helloed: bool = False
    subscriptions: set[str] = field(default_factory=set)

    @property
    def authenticated(self) -> bool:
        return self.user is not None


class Hub:
    def __init__(
        self,
        storage: Storage,
        broker: Broker,
        *,
        clock: Callable[[], Millis] = now_ms,
        id_factory: Callable[[], str] | None = None,
    ):
        self.storage = storage
        self.broker = broker
        self._clock = clock
        self._new_id = id_factory or new_id
        self.sessions: dict[str, Session] = {}
        self._subscribers: dict[str, set[str]] = {}

    # ---------------------------------------------------------- lifecycle

    def connect(self) -> str:
        session_id = self._new_id()
        self.sessions[session_id] = Session(session_id, opened_at=self._clock())
        return session_id

    def disconnect(self, session_id: str) -> None:
        session = self.sessions.pop(session_id, None)
        if session is None:
            return
        for doc_id in session.subscriptions:
            self._subscribers.get(doc_id, set()).discard(session_id)

    # ------------------------------------------------------------ inbound

    def handle(self, session_id: str, message: dict) -> list[Outbound]:
        session = self.sessions.get(session_id)
        if session is None:
            return []
        request_id = message.get("request_id") if isinstance(message, dict) else None
        if not isinstance(message, dict) or not isinstance(message.get("type"), str):
            return [self._error(session_id, request_id, "malformed-message", "not a protocol message")]
        msg_type = message["type"]
        payload = message.get("payload") or {}
        if msg_type not in CLIENT_TYPES:
            return [self._error(session_id, request_id, "unknown-type", f"unknown message type {msg_type}")]
        if not session.helloed and msg_type != "hello":
            return [self._error(session_id, request_id, "protocol-error", "hello must come first")]
        if not session.authenticated and msg_type not in ("hello", "auth"):
            return [self._error(session_id, request_id, "unauthenticated", "authenticate first")]
        handler = getattr(self, f"_on_{msg_type}")
        try:
            return handler(session, request_id, payload)
        except NotFound as exc:
            return [self._error(session_id, request_id, "not-found", str(exc))]
        except PermissionDenied as exc:
            return [self._error(session_id, request_id, "forbidden", str(exc))]
        except ValidationFailed as exc:
            return [self._error(session_id, request_id, "validation-failed", str(exc))]
        except MalformedEvent as exc:
            return [self._error(session_id, request_id, "unknown-event-type", str(exc))]
        except SelectorError as exc:
            return [self._error(session_id, request_id, "invalid-selector", str(exc))]

    def _on_hello(self, session: Session, request_id, payload) -> list[Outbound]:
        version = payload.get("protocol_version")
        if version != PROTOCOL_VERSION:
            return [
                self._error(
                    session.session_id,
                    request_id,
                    "unsupported-protocol-version",
                    f"server speaks {PROTOCOL_VERSION}",
                )
            ]
        session.helloed = True
        return [
            self._frame(
                session.session_id,
                "ack",
                request_id=request_id,
                payload={"protocol_version": PROTOCOL_VERSION},
            )
        ]

    def _on_auth(self, session: Session, request_id, payload) -> list[Outbound]:
        if session.authenticated:
            return [self._error(session.session_id, request_id, "already-authenticated", "session has a user")]
        user = self.storage.authenticate_user(
            str(payload.get("username", "")), str(payload.get("password", ""))
        )
        if user is None:
            return [self._error(session.session_id, request_id, "bad-credentials", "unknown user or wrong password")]
        session.user = user
        return [
            self._frame(
                session.session_id,
                "auth_ok",
                request_id=request_id,
                user_id=user.user_id,
                payload={
                    "user_id": user.user_id,
                    "username": user.username,
                    "role": user.role.value,
                    "consent_given": user.consent_given,
                    "behavior_optin": user.behavior_optin,
                },
            )
        ]

    def _on_subscribe(self, session: Session, request_id, payload) -> list[Outbound]:
        doc_id = str(payload.get("documentId", ""))
        self._authorize_document(session.user, doc_id)
        snapshot = [annotation_json(c) for c in self.storage.live_commentaries(doc_id)]
        seq = self.storage.document_seq(doc_id)
        session.subscriptions.add(doc_id)
        self._subscribers.setdefault(doc_id, set()).add(session.session_id)
        return [
            self._frame(
                session.session_id,
                "ack",
                request_id=request_id,
                payload={"documentId": doc_id, "seq": seq, "commentaries": snapshot},
            )
        ]

    def _on_unsubscribe(self, session: Session, request_id, payload) -> list[Outbound]:
        doc_id = str(payload.get("documentId", ""))
        session.subscriptions.discard(doc_id)
        self._subscribers.get(doc_id, set()).discard(session.session_id)
        return [self._frame(session.session_id, "ack", request_id=request_id, payload={"documentId": doc_id})]

    def _on_comm_create(self, session: Session, request_id, payload) -> list[Outbound]:
        doc_id = str(payload.get("documentId", ""))
        self._require_subscription(session, doc_id)
        anchor = selectors_from_json(payload.get("selectors")) if payload.get("selectors") else None
        commentary, seq = self.storage.create_commentary(
            doc_id,
            session.user.user_id,
            anchor=anchor,
            note_text=payload.get("text"),
            label_id=payload.get("label"),
            tags=tuple(payload.get("tags") or ()),
            parent_id=payload.get("parentId"),
        )
        return self._ack_and_broadcast(session, request_id, "create", commentary, seq)

    def _on_comm_update(self, session: Session, request_id, payload) -> list[Outbound]:
        commentary_id = str(payload.get("commentaryId", ""))
        current = self.storage.get_commentary(commentary_id)
        self._require_subscription(session, current.document_id)
        fields = {}
        if "text" in payload:
            fields["note_text"] = payload["text"]
        if "label" in payload:
            fields["label_id"] = payload["label"]
        if "tags" in payload:
            fields["tags"] = tuple(payload["tags"] or ())
        if "selectors" in payload:
            fields["anchor"] = (
                selectors_from_json(payload["selectors"]) if payload["selectors"] else None
            )
        commentary, seq = self.storage.update_commentary(
            commentary_id, session.user.user_id, fields
        )
        return self._ack_and_broadcast(session, request_id, "update", commentary, seq)

    def _on_comm_delete(self, session: Session, request_id, payload) -> list[Outbound]:
        commentary_id = str(payload.get("commentaryId", ""))
        current = self.storage.get_commentary(commentary_id)
        self._require_subscription(session, current.document_id)
        commentary, seq = self.storage.delete_commentary(commentary_id, session.user.user_id)
        return self._ack_and_broadcast(session, request_id, "delete", commentary, seq)

    def _on_behavior_event(self, session: Session, request_id, payload) -> list[Outbound]:
        # Stored only under opt-in; the ack is identical either way so the
        # client does not need to branch on consent state.
        self.storage.record_event(
            str(payload.get("type", "")),
            session.user.user_id,
            str(payload.get("documentId", "")),
            client_ts=payload.get("clientTs"),
            payload=payload.get("payload") or {},
        )
        return [self._frame(session.session_id, "ack", request_id=request_id, payload={})]

    def _on_assist_request(self, session: Session, request_id, payload) -> list[Outbound]:
        skill_id = str(payload.get("skillId", ""))
        inputs = payload.get("inputs") or {}
        context = {
            "documentId": payload.get("documentId"),
            "commentaryId": payload.get("commentaryId"),
        }
        _job, events = self.broker.submit(
            skill_id, inputs, session.session_id, request_id or "", context=context
        )
        return self.on_broker_events(events)

    # ------------------------------------------------- broker integration

    def on_broker_events(self, events: list) -> list[Outbound]:
        """Translate broker events into client frames.

        WorkerSend frames are passed through for the /broker adapter (the
        session id is the node id, flagged via the `worker` key).
        """
        out: list[Outbound] = []
        for event in events:
            if isinstance(event, WorkerSend):
                out.append(Outbound(event.node_id, {"worker": True, **event.frame}))
                continue
            assert isinstance(event, JobOutcome)
            out.extend(self._deliver_outcome(event))
        return out

    def _deliver_outcome(self, outcome: JobOutcome) -> list[Outbound]:
        job = outcome.job
        out: list[Outbound] = []
        if outcome.kind == "done":
            reply_frames = self._persist_assistant_reply(job, outcome.output or {})
            if job.origin_session in self.sessions:
                out.append(
                    self._frame(
                        job.origin_session,
                        "assist_response",
                        request_id=job.request_id,
                        payload={"skillId": job.skill_id, "output": outcome.output or {}},
                    )
                )
            out.extend(reply_frames)
            return out
        code = {
            "failed": "assist-failed",
            "timed_out": "assist-timeout",
            "no-such-skill": "no-such-skill",
            "invalid-payload": "invalid-payload",
        }.get(outcome.kind, "assist-failed")
        if job.origin_session in self.sessions:
            out.append(
                self._error(job.origin_session, job.request_id, code, outcome.error or outcome.kind)
            )
        return out

    def _persist_assistant_reply(self, job, output: dict) -> list[Outbound]:
        """A generated reply becomes a persisted commentary and a broadcast."""
        reply_text = output.get("reply_text")
        parent_id = job.context.get("commentaryId")
        if not reply_text or not parent_id:
            return []
        try:
            parent = self.storage.get_commentary(parent_id)
            assistant = self.storage.ensure_assistant_user()
            commentary, seq = self.storage.create_commentary(
                parent.document_id,
                assistant.user_id,
                note_text=str(reply_text),
                parent_id=parent_id,
                origin=Origin.ASSISTANT,
            )
        except (NotFound, ValidationFailed) as exc:
            log.warning("dropping assistant reply for job %s: %s", job.job_id, exc)
            return []
        return self._broadcast(parent.document_id, "create", commentary, seq)

    def tick(self, now: Millis | None = None) -> list[Outbound]:
        """Periodic driver: heartbeat liveness and assistance timeouts."""
        return self.on_broker_events(self.broker.sweep(now))

    # ------------------------------------------------------------ helpers

    def _ack_and_broadcast(
        self, session: Session, request_id, op: str, commentary, seq: int
    ) -> list[Outbound]:
        ann = annotation_json(commentary)
        out = [
            self._frame(
                session.session_id,
                "ack",
                request_id=request_id,
                payload={"op": op, "annotation": ann, "seq": seq},
            )
        ]
        out.extend(self._broadcast(commentary.document_id, op, commentary, seq))
        return out

    def _broadcast(self, document_id: str, op: str, commentary, seq: int) -> list[Outbound]:
        ann = annotation_json(commentary)
        frame_payload = {"op": op, "annotation": ann}
        return [
            self._frame(
                sid,
                "comm_broadcast",
                seq=seq,
                user_id=commentary.author,
                payload=frame_payload,
            )
            for sid in sorted(self._subscribers.get(document_id, ()))
            if sid in self.sessions
        ]

    def _require_subscription(self, session: Session, document_id: str) -> None:
        if document_id not in session.subscriptions:
            raise PermissionDenied(f"not subscribed to document {document_id}")

    def _authorize_document(self, user: User, document_id: str) -> None:
        doc = self.storage.get_document(document_id)  # raises NotFound
        if user.role is Role.ADMIN or user.user_id == doc.uploaded_by:
            return
        studies = [s for s in self.storage.list_studies() if document_id in s.document_ids]
        if studies and not any(user.user_id in s.participant_ids for s in studies):
            raise PermissionDenied("document restricted to study participants")

    def _frame(
        self,
        session_id: str,
        msg_type: str,
        *,
        request_id: str | None = None,
        seq: int | None = None,
        user_id: str | None = None,
        payload: dict,
    ) -> Outbound:
        message = {"type": msg_type, "server_ts": self._clock(), "payload": payload}
        if request_id is not None:
            message["request_id"] = request_id
        if seq is not None:
            message["seq"] = seq
        if user_id is not None:
            message["user_id"] = user_id
        return Outbound(session_id, message)

    def _error(self, session_id: str, request_id, code: str, detail: str) -> Outbound:
        return self._frame(
            session_id,
            "error",
            request_id=request_id,
            payload={"code": code, "message": detail},
        )


# Re-exported for adapters that need the default cadence.
HEARTBEAT_INTERVAL_MS = broker_mod.HEARTBEAT_INTERVAL_MS
