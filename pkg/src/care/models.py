"""Core domain types: users, documents, label sets, inline commentaries, studies.

All types are immutable value objects; mutation goes through the storage
layer, which owns write serialization. Timestamps are server-assigned UTC
milliseconds throughout -- client clocks are never trusted.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass
from enum import Enum

from care.anchoring import SelectorSet

Millis = int

MAX_TAGS = 32
MAX_TAG_LENGTH = 64


def now_ms() -> Millis:
    return int(time.time() * 1000)


def new_id() -> str:
    return uuid.uuid4().hex


class Role(str, Enum):
    ADMIN = "admin"
    USER = "user"


class Origin(str, Enum):
    HUMAN = "human"
    ASSISTANT = "assistant"


@dataclass(frozen=True, slots=True)
class User:
    user_id: str
    username: str
    email: str
    role: Role = Role.USER
    consent_given: bool = False
    behavior_optin: bool = False
    registered_at: Millis = 0

    def __post_init__(self) -> None:
        if self.behavior_optin and not self.consent_given:
            raise ValueError("behavior_optin requires consent_given")


@dataclass(frozen=True, slots=True)
class Document:
    """A stored PDF plus its extracted per-page text layer.

    The text layer is immutable after import; re-importing different bytes
    yields a new document. pdf_bytes is None when the blob was not loaded.
    """

    document_id: str
    title: str
    text_layer: tuple[str, ...]
    page_count: int
    uploaded_by: str
    uploaded_at: Millis
    content_hash: str
    pdf_bytes: bytes | None = None
    text_layer_empty: bool = False

    def __post_init__(self) -> None:
        if self.page_count != len(self.text_layer):
            raise ValueError("page_count must equal len(text_layer)")
        if self.page_count <= 0:
            raise ValueError("document needs at least one page")


@dataclass(frozen=True, slots=True)
class Label:
    label_id: str
    display_name: str
    color: str

    def __post_init__(self) -> None:
        if not self.display_name:
            raise ValueError("label display_name must be non-empty")


@dataclass(frozen=True, slots=True)
class LabelSet:
    labelset_id: str
    name: str
    labels: tuple[Label, ...]

    def __post_init__(self) -> None:
        ids = [l.label_id for l in self.labels]
        if len(ids) != len(set(ids)):
            raise ValueError("label_ids must be unique within a set")

    def __contains__(self, label_id: str) -> bool:
        return any(l.label_id == label_id for l in self.labels)


@dataclass(frozen=True, slots=True)
class InlineCommentary:
    """A highlight with optional note text, label, tags and reply threading.

    A commentary with neither anchor nor parent_id is document-level.
    Replies (parent_id set) never carry an anchor; they live in the thread
    of their root. Deletion is soft: tombstones stay in the store.
    """

    commentary_id: str
    document_id: str
    author: str
    anchor: SelectorSet | None = None
    note_text: str | None = None
    label_id: str | None = None
    tags: tuple[str, ...] = ()
    parent_id: str | None = None
    created_at: Millis = 0
    updated_at: Millis = 0
    deleted: bool = False
    origin: Origin = Origin.HUMAN

    def is_reply(self) -> bool:
        return self.parent_id is not None


@dataclass(frozen=True, slots=True)
class Study:
    study_id: str
    name: str
    document_ids: tuple[str, ...]
    participant_ids: tuple[str, ...]
    labelset_id: str
    created_by: str
    time_limit_ms: Millis | None = None


@dataclass(frozen=True, slots=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_commentary(
    c: InlineCommentary,
    doc: Document,
    ls: LabelSet | None,
) -> ValidationResult:
    """Check a commentary against the domain invariants.

    Reports violations instead of raising; never mutates its inputs.
    `ls` is the effective label set for the document (None when no label
    set applies, in which case any label_id is unknown).
    """
    violations: list[str] = []
    if c.document_id != doc.document_id:
        violations.append("document-mismatch")
    if c.parent_id is not None and c.anchor is not None:
        violations.append("reply-with-anchor")
    if c.parent_id is not None and c.parent_id == c.commentary_id:
        violations.append("self-parent")
    if c.anchor is not None:
        total = sum(len(p) for p in doc.text_layer) + max(0, doc.page_count - 1)
        if c.anchor.position.end > total:
            violations.append("anchor-out-of-range")
        if c.anchor.page_index >= doc.page_count:
            violations.append("anchor-page-out-of-range")
    if c.label_id is not None and (ls is None or c.label_id not in ls):
        violations.append("unknown-label")
    if len(c.tags) > MAX_TAGS:
        violations.append("too-many-tags")
    if any(len(t) > MAX_TAG_LENGTH for t in c.tags):
        violations.append("tag-too-long")
    if any(not t for t in c.tags):
        violations.append("empty-tag")
    if c.updated_at < c.created_at:
        violations.append("timestamps-out-of-order")
    return ValidationResult(tuple(violations))


def thread_of(
    c: InlineCommentary,
    all_commentaries: list[InlineCommentary] | tuple[InlineCommentary, ...],
) -> list[InlineCommentary]:
    """Return a thread as [root, replies...] in a total, stable order.

    Replies (direct and transitive) are sorted by created_at ascending with
    ties broken by commentary_id. Soft-deleted replies are included; the
    consumer decides how to display tombstones.
    """
    if c.parent_id is not None:
        raise ValueError("thread_of expects a thread root (parent_id absent)")
    children: dict[str, list[InlineCommentary]] = {}
    for item in all_commentaries:
        if item.parent_id is not None:
            children.setdefault(item.parent_id, []).append(item)
    members: list[InlineCommentary] = []
    frontier = [c.commentary_id]
    seen = {c.commentary_id}
    while frontier:
        next_frontier: list[str] = []
        for pid in frontier:
            for reply in children.get(pid, []):
                if reply.commentary_id in seen:
                    continue
                seen.add(reply.commentary_id)
                members.append(reply)
                next_frontier.append(reply.commentary_id)
        frontier = next_frontier
    members.sort(key=lambda r: (r.created_at, r.commentary_id))
    return [c, *members]


__all__ = [
    "Millis",
    "MAX_TAGS",
    "MAX_TAG_LENGTH",
    "now_ms",
    "new_id",
    "Role",
    "Origin",
    "User",
    "Document",
    "Label",
    "LabelSet",
    "InlineCommentary",
    "Study",
    "ValidationResult",
    "validate_commentary",
    "thread_of",
]
