"""Embedded relational store for all platform entities.

Single SQLite file per data directory, WAL journal with full fsync so an
acknowledged write survives a hard kill. One logical writer: every public
method takes the storage lock, so callers (protocol hub, admin API, CLI)
never interleave partial transactions. Reads run on the same connection
and therefore see a consistent snapshot.

Per-document broadcast sequence numbers live on the documents row and are
bumped in the same transaction as the commentary write they number.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import sqlite3
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable

from care import pdftext
from care.anchoring import (
    PageText,
    SelectorSet,
    TextPositionSelector,
    TextQuoteSelector,
)
from care.models import (
    Document,
    InlineCommentary,
    Label,
    LabelSet,
    Millis,
    Origin,
    Role,
    Study,
    User,
    new_id,
    now_ms,
    validate_commentary,
)

SCHEMA_VERSION = "care-store/1"

# Behavior event types accepted for ingestion. text_selection is a
# client-side gesture; it is accepted when reported so first-interaction
# timing can use it.
EVENT_TYPES = frozenset(
    {
        "doc_enter",
        "doc_leave",
        "page_view",
        "comm_create",
        "comm_edit",
        "comm_delete",
        "quickscroll_to_sidebar",
        "quickscroll_to_highlight",
        "button_click",
        "text_selection",
    }
)

ASSISTANT_USER_ID = "assistant"

_PBKDF2_ITERATIONS = 60_000


class StorageError(Exception):
    pass


class NotFound(StorageError):
    pass


class PermissionDenied(StorageError):
    pass


class ValidationFailed(StorageError):
    def __init__(self, violations: tuple[str, ...]):
        super().__init__(f"invalid commentary: {', '.join(violations)}")
        self.violations = violations


class MalformedEvent(StorageError):
    pass


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS users (
    user_id TEXT PRIMARY KEY,
    username TEXT NOT NULL UNIQUE,
    email TEXT NOT NULL DEFAULT '',
    role TEXT NOT NULL DEFAULT 'user',
    consent_given INTEGER NOT NULL DEFAULT 0,
    behavior_optin INTEGER NOT NULL DEFAULT 0,
    registered_at INTEGER NOT NULL,
    password_hash TEXT NOT NULL DEFAULT '',
    consent_accepted_at INTEGER,
    consent_receipt TEXT
);
CREATE TABLE IF NOT EXISTS documents (
    document_id TEXT PRIMARY KEY,
    title TEXT NOT NULL,
    pdf_bytes BLOB NOT NULL,
    page_count INTEGER NOT NULL,
    uploaded_by TEXT NOT NULL,
    uploaded_at INTEGER NOT NULL,
    content_hash TEXT NOT NULL UNIQUE,
    text_layer_empty INTEGER NOT NULL DEFAULT 0,
    last_seq INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS document_pages (
    document_id TEXT NOT NULL,
    page_index INTEGER NOT NULL,
    text TEXT NOT NULL,
    PRIMARY KEY (document_id, page_index)
);
CREATE TABLE IF NOT EXISTS label_sets (
    labelset_id TEXT PRIMARY KEY,
    name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS labels (
    labelset_id TEXT NOT NULL,
    label_id TEXT NOT NULL,
    display_name TEXT NOT NULL,
    color TEXT NOT NULL,
    position INTEGER NOT NULL,
    PRIMARY KEY (labelset_id, label_id)
);
CREATE TABLE IF NOT EXISTS commentaries (
    commentary_id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL,
    author TEXT NOT NULL,
    selectors TEXT,
    note_text TEXT,
    label_id TEXT,
    tags TEXT NOT NULL DEFAULT '[]',
    parent_id TEXT,
    created_at INTEGER NOT NULL,
    updated_at INTEGER NOT NULL,
    deleted INTEGER NOT NULL DEFAULT 0,
    origin TEXT NOT NULL DEFAULT 'human'
);
CREATE INDEX IF NOT EXISTS idx_comm_document ON commentaries (document_id, created_at);
CREATE TABLE IF NOT EXISTS studies (
    study_id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    labelset_id TEXT NOT NULL,
    created_by TEXT NOT NULL,
    time_limit_ms INTEGER,
    document_ids TEXT NOT NULL,
    participant_ids TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS behavior_events (
    event_id INTEGER PRIMARY KEY AUTOINCREMENT,
    type TEXT NOT NULL,
    ts INTEGER NOT NULL,
    client_ts INTEGER,
    user_id TEXT NOT NULL,
    document_id TEXT NOT NULL,
    payload TEXT NOT NULL DEFAULT '{}'
);
CREATE INDEX IF NOT EXISTS idx_events_user_doc ON behavior_events (user_id, document_id, ts);
"""


def hash_password(password: str, salt: bytes | None = None) -> str:
    salt = salt if salt is not None else new_id().encode()[:16]
    digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, _PBKDF2_ITERATIONS)
    return f"pbkdf2:{_PBKDF2_ITERATIONS}:{salt.hex()}:{digest.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        _, iters, salt_hex, digest_hex = stored.split(":")
        digest = hashlib.pbkdf2_hmac(
            "sha256", password.encode(), bytes.fromhex(salt_hex), int(iters)
        )
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, AttributeError):
        return False


def selectors_to_json(s: SelectorSet | None) -> str | None:
    if s is None:
        return None
    return json.dumps(
        {
            "quote": {"exact": s.quote.exact, "prefix": s.quote.prefix, "suffix": s.quote.suffix},
            "position": {"start": s.position.start, "end": s.position.end},
            "pageIndex": s.page_index,
        },
        ensure_ascii=False,
    )


def selectors_from_json(raw: str | dict | None) -> SelectorSet | None:
    if raw is None:
        return None
    data = json.loads(raw) if isinstance(raw, str) else raw
    return SelectorSet(
        quote=TextQuoteSelector(
            exact=data["quote"]["exact"],
            prefix=data["quote"].get("prefix", ""),
            suffix=data["quote"].get("suffix", ""),
        ),
        position=TextPositionSelector(
            start=data["position"]["start"], end=data["position"]["end"]
        ),
        page_index=data["pageIndex"],
    )


class Storage:
    def __init__(
        self,
        data_dir: str | Path,
        *,
        clock: Callable[[], Millis] = now_ms,
        id_factory: Callable[[], str] = new_id,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._new_id = id_factory
        self._lock = threading.RLock()
        self._db = sqlite3.connect(self.data_dir / "care.db", check_same_thread=False)
        self._db.execute("PRAGMA journal_mode=WAL")
        self._db.execute("PRAGMA synchronous=FULL")
        self._db.execute("PRAGMA foreign_keys=ON")
        with self._lock, self._db:
            self._db.executescript(_SCHEMA)
            self._db.execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('schema', ?)",
                (SCHEMA_VERSION,),
            )

    def close(self) -> None:
        with self._lock:
            self._db.close()

    def wipe(self) -> None:
        """Remove all rows (schema stays). Used by import tooling and tests."""
        with self._lock, self._db:
            for table in (
                "users",
                "documents",
                "document_pages",
                "label_sets",
                "labels",
                "commentaries",
                "studies",
                "behavior_events",
            ):
                self._db.execute(f"DELETE FROM {table}")

    # ------------------------------------------------------------- users

    def add_user(
        self,
        username: str,
        email: str = "",
        password: str = "",
        *,
        role: Role = Role.USER,
        consent_given: bool = False,
        behavior_optin: bool = False,
        consent_receipt_key: bytes | None = None,
        user_id: str | None = None,
    ) -> User:
        if not username:
            raise StorageError("username must be non-empty")
        if behavior_optin and not consent_given:
            raise ValidationFailed(("optin-without-consent",))
        uid = user_id or self._new_id()
        ts = self._clock()
        accepted_at = ts if consent_given else None
        receipt = None
        if consent_given and consent_receipt_key:
            receipt = hmac.new(
                consent_receipt_key, f"{uid}:{accepted_at}".encode(), "sha256"
            ).hexdigest()
        with self._lock, self._db:
            try:
                self._db.execute(
                    "INSERT INTO users (user_id, username, email, role, consent_given,"
                    " behavior_optin, registered_at, password_hash, consent_accepted_at,"
                    " consent_receipt) VALUES (?,?,?,?,?,?,?,?,?,?)",
                    (
                        uid,
                        username,
                        email,
                        role.value,
                        int(consent_given),
                        int(behavior_optin),
                        ts,
                        hash_password(password) if password else "",
                        accepted_at,
                        receipt,
                    ),
                )
            except sqlite3.IntegrityError as exc:
                raise StorageError(f"username or user_id already taken: {username}") from exc
        return self.get_user(uid)

    def get_user(self, user_id: str) -> User:
        row = self._one("SELECT * FROM users WHERE user_id = ?", (user_id,))
        if row is None:
            raise NotFound(f"no user {user_id}")
        return self._user_from_row(row)

    def find_user(self, username: str) -> User | None:
        row = self._one("SELECT * FROM users WHERE username = ?", (username,))
        return self._user_from_row(row) if row else None

    def authenticate_user(self, username: str, password: str) -> User | None:
        row = self._one("SELECT * FROM users WHERE username = ?", (username,))
        if row is None or not row["password_hash"]:
            # Burn a hash anyway so the timing does not reveal existence.
            hash_password(password)
            return None
        if not verify_password(password, row["password_hash"]):
            return None
        return self._user_from_row(row)

    def list_users(self) -> list[User]:
        rows = self._all("SELECT * FROM users ORDER BY user_id")
        return [self._user_from_row(r) for r in rows]

    def ensure_assistant_user(self) -> User:
        """The synthetic author of assistant-generated replies (lazy)."""
        try:
            return self.get_user(ASSISTANT_USER_ID)
        except NotFound:
            return self.add_user(
                "assistant", role=Role.USER, consent_given=True, user_id=ASSISTANT_USER_ID
            )

    @staticmethod
    def _user_from_row(row: sqlite3.Row) -> User:
        return User(
            user_id=row["user_id"],
            username=row["username"],
            email=row["email"],
            role=Role(row["role"]),
            consent_given=bool(row["consent_given"]),
            behavior_optin=bool(row["behavior_optin"]),
            registered_at=row["registered_at"],
        )

    # --------------------------------------------------------- documents

    def import_document(self, pdf_bytes: bytes, title: str, uploader: str) -> Document:
        """Store a PDF and its extracted text layer.

        Idempotent by content hash: re-importing the same bytes returns the
        existing document. PDFs with no extractable text are stored and
        flagged; anchored commentaries are rejected for them.
        """
        content_hash = hashlib.sha256(pdf_bytes).hexdigest()
        existing = self._one(
            "SELECT document_id FROM documents WHERE content_hash = ?", (content_hash,)
        )
        if existing is not None:
            return self.get_document(existing["document_id"])
        pages = pdftext.extract_text_pages(pdf_bytes)
        empty = all(not p.strip() for p in pages)
        doc_id = content_hash
        with self._lock, self._db:
            self._db.execute(
                "INSERT INTO documents (document_id, title, pdf_bytes, page_count,"
                " uploaded_by, uploaded_at, content_hash, text_layer_empty)"
                " VALUES (?,?,?,?,?,?,?,?)",
                (doc_id, title, pdf_bytes, len(pages), uploader, self._clock(), content_hash, int(empty)),
            )
            self._db.executemany(
                "INSERT INTO document_pages (document_id, page_index, text) VALUES (?,?,?)",
                [(doc_id, i, text) for i, text in enumerate(pages)],
            )
        return self.get_document(doc_id)

    def get_document(self, document_id: str, *, with_pdf: bool = False) -> Document:
        row = self._one("SELECT * FROM documents WHERE document_id = ?", (document_id,))
        if row is None:
            raise NotFound(f"no document {document_id}")
        pages = [
            r["text"]
            for r in self._all(
                "SELECT text FROM document_pages WHERE document_id = ? ORDER BY page_index",
                (document_id,),
            )
        ]
        return Document(
            document_id=row["document_id"],
            title=row["title"],
            text_layer=tuple(pages),
            page_count=row["page_count"],
            uploaded_by=row["uploaded_by"],
            uploaded_at=row["uploaded_at"],
            content_hash=row["content_hash"],
            pdf_bytes=bytes(row["pdf_bytes"]) if with_pdf else None,
            text_layer_empty=bool(row["text_layer_empty"]),
        )

    def list_documents(self) -> list[Document]:
        rows = self._all("SELECT document_id FROM documents ORDER BY document_id")
        return [self.get_document(r["document_id"]) for r in rows]

    def document_text(self, document_id: str) -> PageText:
        return PageText(self.get_document(document_id).text_layer)

    def document_seq(self, document_id: str) -> int:
        row = self._one("SELECT last_seq FROM documents WHERE document_id = ?", (document_id,))
        if row is None:
            raise NotFound(f"no document {document_id}")
        return row["last_seq"]

    # -------------------------------------------------------- label sets

    def add_labelset(
        self, name: str, labels: Iterable[Label], labelset_id: str | None = None
    ) -> LabelSet:
        ls = LabelSet(labelset_id or self._new_id(), name, tuple(labels))
        with self._lock, self._db:
            self._db.execute(
                "INSERT INTO label_sets (labelset_id, name) VALUES (?,?)",
                (ls.labelset_id, ls.name),
            )
            self._db.executemany(
                "INSERT INTO labels (labelset_id, label_id, display_name, color, position)"
                " VALUES (?,?,?,?,?)",
                [
                    (ls.labelset_id, l.label_id, l.display_name, l.color, i)
                    for i, l in enumerate(ls.labels)
                ],
            )
        return ls

    def get_labelset(self, labelset_id: str) -> LabelSet:
        row = self._one("SELECT * FROM label_sets WHERE labelset_id = ?", (labelset_id,))
        if row is None:
            raise NotFound(f"no label set {labelset_id}")
        labels = self._all(
            "SELECT * FROM labels WHERE labelset_id = ? ORDER BY position", (labelset_id,)
        )
        return LabelSet(
            labelset_id,
            row["name"],
            tuple(Label(l["label_id"], l["display_name"], l["color"]) for l in labels),
        )

    def list_labelsets(self) -> list[LabelSet]:
        rows = self._all("SELECT labelset_id FROM label_sets ORDER BY labelset_id")
        return [self.get_labelset(r["labelset_id"]) for r in rows]

    def effective_labelset(self, document_id: str) -> LabelSet | None:
        """Union of labels valid for commentaries on this document.

        Label sets of studies containing the document; when the document is
        in no study, the union of all configured label sets.
        """
        study_ls = [
            s.labelset_id for s in self.list_studies() if document_id in s.document_ids
        ]
        sets = (
            [self.get_labelset(i) for i in study_ls] if study_ls else self.list_labelsets()
        )
        if not sets:
            return None
        merged: dict[str, Label] = {}
        for ls in sets:
            for label in ls.labels:
                merged.setdefault(label.label_id, label)
        return LabelSet("effective:" + document_id, "effective", tuple(merged.values()))

    # ----------------------------------------------------------- studies

    def create_study(
        self,
        name: str,
        document_ids: Iterable[str],
        participant_ids: Iterable[str],
        labelset_id: str,
        created_by: str,
        time_limit_ms: Millis | None = None,
    ) -> Study:
        docs = tuple(document_ids)
        parts = tuple(participant_ids)
        for d in docs:
            self.get_document(d)
        for p in parts:
            self.get_user(p)
        self.get_labelset(labelset_id)
        study = Study(self._new_id(), name, docs, parts, labelset_id, created_by, time_limit_ms)
        with self._lock, self._db:
            self._db.execute(
                "INSERT INTO studies (study_id, name, labelset_id, created_by,"
                " time_limit_ms, document_ids, participant_ids) VALUES (?,?,?,?,?,?,?)",
                (
                    study.study_id,
                    study.name,
                    study.labelset_id,
                    study.created_by,
                    study.time_limit_ms,
                    json.dumps(list(docs)),
                    json.dumps(list(parts)),
                ),
            )
        return study

    def list_studies(self) -> list[Study]:
        rows = self._all("SELECT * FROM studies ORDER BY study_id")
        return [
            Study(
                r["study_id"],
                r["name"],
                tuple(json.loads(r["document_ids"])),
                tuple(json.loads(r["participant_ids"])),
                r["labelset_id"],
                r["created_by"],
                r["time_limit_ms"],
            )
            for r in rows
        ]

    # ------------------------------------------------------ commentaries

    def create_commentary(
        self,
        document_id: str,
        author: str,
        *,
        anchor: SelectorSet | None = None,
        note_text: str | None = None,
        label_id: str | None = None,
        tags: Iterable[str] = (),
        parent_id: str | None = None,
        origin: Origin = Origin.HUMAN,
    ) -> tuple[InlineCommentary, int]:
        doc = self.get_document(document_id)
        ts = self._clock()
        c = InlineCommentary(
            commentary_id=self._new_id(),
            document_id=document_id,
            author=author,
            anchor=anchor,
            note_text=note_text,
            label_id=label_id,
            tags=tuple(tags),
            parent_id=parent_id,
            created_at=ts,
            updated_at=ts,
            origin=origin,
        )
        self.get_user(author)
        self._validate_write(c, doc)
        with self._lock, self._db:
            seq = self._bump_seq(document_id)
            self._db.execute(
                "INSERT INTO commentaries (commentary_id, document_id, author, selectors,"
                " note_text, label_id, tags, parent_id, created_at, updated_at, deleted, origin)"
                " VALUES (?,?,?,?,?,?,?,?,?,?,0,?)",
                (
                    c.commentary_id,
                    c.document_id,
                    c.author,
                    selectors_to_json(c.anchor),
                    c.note_text,
                    c.label_id,
                    json.dumps(list(c.tags), ensure_ascii=False),
                    c.parent_id,
                    c.created_at,
                    c.updated_at,
                    c.origin.value,
                ),
            )
        return c, seq

    def update_commentary(
        self, commentary_id: str, actor: str, fields: dict
    ) -> tuple[InlineCommentary, int]:
        """Last-writer-wins per field; only the author or an admin may update."""
        current = self.get_commentary(commentary_id)
        if current.deleted:
            raise NotFound(f"commentary {commentary_id} is deleted")
        self._check_write_permission(current, actor)
        allowed = {"note_text", "label_id", "tags", "anchor"}
        unknown = set(fields) - allowed
        if unknown:
            raise ValidationFailed((f"unknown-field:{sorted(unknown)[0]}",))
        doc = self.get_document(current.document_id)
        merged = InlineCommentary(
            commentary_id=current.commentary_id,
            document_id=current.document_id,
            author=current.author,
            anchor=fields.get("anchor", current.anchor),
            note_text=fields.get("note_text", current.note_text),
            label_id=fields.get("label_id", current.label_id),
            tags=tuple(fields.get("tags", current.tags)),
            parent_id=current.parent_id,
            created_at=current.created_at,
            updated_at=max(self._clock(), current.created_at),
            origin=current.origin,
        )
        self._validate_write(merged, doc)
        with self._lock, self._db:
            seq = self._bump_seq(current.document_id)
            self._db.execute(
                "UPDATE commentaries SET selectors=?, note_text=?, label_id=?, tags=?,"
                " updated_at=? WHERE commentary_id=?",
                (
                    selectors_to_json(merged.anchor),
                    merged.note_text,
                    merged.label_id,
                    json.dumps(list(merged.tags), ensure_ascii=False),
                    merged.updated_at,
                    commentary_id,
                ),
            )
        return merged, seq

    def delete_commentary(self, commentary_id: str, actor: str) -> tuple[InlineCommentary, int]:
        """Soft delete: the row becomes a tombstone and stays exportable."""
        current = self.get_commentary(commentary_id)
        if current.deleted:
            raise NotFound(f"commentary {commentary_id} is deleted")
        self._check_write_permission(current, actor)
        ts = max(self._clock(), current.created_at)
        with self._lock, self._db:
            seq = self._bump_seq(current.document_id)
            self._db.execute(
                "UPDATE commentaries SET deleted=1, updated_at=? WHERE commentary_id=?",
                (ts, commentary_id),
            )
        return self.get_commentary(commentary_id), seq

    def get_commentary(self, commentary_id: str) -> InlineCommentary:
        row = self._one(
            "SELECT * FROM commentaries WHERE commentary_id = ?", (commentary_id,)
        )
        if row is None:
            raise NotFound(f"no commentary {commentary_id}")
        return self._commentary_from_row(row)

    def live_commentaries(self, document_id: str) -> list[InlineCommentary]:
        rows = self._all(
            "SELECT * FROM commentaries WHERE document_id = ? AND deleted = 0"
            " ORDER BY created_at, commentary_id",
            (document_id,),
        )
        return [self._commentary_from_row(r) for r in rows]

    def all_commentaries(self, document_id: str | None = None) -> list[InlineCommentary]:
        if document_id is None:
            rows = self._all(
                "SELECT * FROM commentaries ORDER BY document_id, created_at, commentary_id"
            )
        else:
            rows = self._all(
                "SELECT * FROM commentaries WHERE document_id = ?"
                " ORDER BY created_at, commentary_id",
                (document_id,),
            )
        return [self._commentary_from_row(r) for r in rows]

    def _bump_seq(self, document_id: str) -> int:
        cur = self._db.execute(
            "UPDATE documents SET last_seq = last_seq + 1 WHERE document_id = ?",
            (document_id,),
        )
        if cur.rowcount != 1:
            raise NotFound(f"no document {document_id}")
        return self._db.execute(
            "SELECT last_seq FROM documents WHERE document_id = ?", (document_id,)
        ).fetchone()[0]

    def _check_write_permission(self, c: InlineCommentary, actor: str) -> None:
        user = self.get_user(actor)
        if actor != c.author and user.role is not Role.ADMIN:
            raise PermissionDenied("only the author or an admin may modify a commentary")

    def _validate_write(self, c: InlineCommentary, doc: Document) -> None:
        if c.anchor is not None and doc.text_layer_empty:
            raise ValidationFailed(("anchoring-disabled",))
        if c.parent_id is not None:
            parent = self.get_commentary(c.parent_id)  # raises NotFound for dangling
            if parent.document_id != c.document_id:
                raise ValidationFailed(("parent-in-other-document",))
        result = validate_commentary(c, doc, self.effective_labelset(c.document_id))
        if not result.ok:
            raise ValidationFailed(result.violations)

    @staticmethod
    def _commentary_from_row(row: sqlite3.Row) -> InlineCommentary:
        return InlineCommentary(
            commentary_id=row["commentary_id"],
            document_id=row["document_id"],
            author=row["author"],
            anchor=selectors_from_json(row["selectors"]),
            note_text=row["note_text"],
            label_id=row["label_id"],
            tags=tuple(json.loads(row["tags"])),
            parent_id=row["parent_id"],
            created_at=row["created_at"],
            updated_at=row["updated_at"],
            deleted=bool(row["deleted"]),
            origin=Origin(row["origin"]),
        )

    # ---------------------------------------------------- behavior events

    def record_event(
        self,
        type_: str,
        user_id: str,
        document_id: str,
        *,
        client_ts: Millis | None = None,
        payload: dict | None = None,
        ts: Millis | None = None,
    ) -> bool:
        """Store a behavioral event; returns False when dropped (no opt-in).

        The opt-in gate is enforced here so no code path can slip an event
        of a non-consenting user into the store. Server receipt time is
        authoritative; the client-reported time is kept alongside.
        """
        if type_ not in EVENT_TYPES:
            raise MalformedEvent(f"unknown-event-type: {type_}")
        payload = dict(payload or {})
        if type_ == "page_view":
            page_index = payload.get("page_index")
            doc = self.get_document(document_id)
            if not isinstance(page_index, int) or not 0 <= page_index < doc.page_count:
                raise MalformedEvent("page_view requires page_index < page_count")
        user = self.get_user(user_id)
        if not user.behavior_optin:
            return False
        with self._lock, self._db:
            self._db.execute(
                "INSERT INTO behavior_events (type, ts, client_ts, user_id, document_id, payload)"
                " VALUES (?,?,?,?,?,?)",
                (
                    type_,
                    ts if ts is not None else self._clock(),
                    client_ts,
                    user_id,
                    document_id,
                    json.dumps(payload, sort_keys=True, ensure_ascii=False),
                ),
            )
        return True

    def events(
        self, *, user_id: str | None = None, document_id: str | None = None
    ) -> list[dict]:
        sql = "SELECT * FROM behavior_events"
        conds, args = [], []
        if user_id is not None:
            conds.append("user_id = ?")
            args.append(user_id)
        if document_id is not None:
            conds.append("document_id = ?")
            args.append(document_id)
        if conds:
            sql += " WHERE " + " AND ".join(conds)
        sql += " ORDER BY ts, event_id"
        return [
            {
                "type": r["type"],
                "ts": r["ts"],
                "clientTs": r["client_ts"],
                "userId": r["user_id"],
                "documentId": r["document_id"],
                "payload": json.loads(r["payload"]),
            }
            for r in self._all(sql, tuple(args))
        ]

    # ------------------------------------------------------- replication

    @contextmanager
    def restore_transaction(self):
        """All-or-nothing scope for the restore_* methods used by import."""
        with self._lock:
            self._db.execute("BEGIN IMMEDIATE")
            try:
                yield
            except BaseException:
                self._db.execute("ROLLBACK")
                raise
            self._db.execute("COMMIT")

    def restore_user(self, user: User) -> None:
        """Insert a user preserving id and timestamps; no credentials."""
        self._db.execute(
            "INSERT INTO users (user_id, username, email, role, consent_given,"
            " behavior_optin, registered_at, password_hash) VALUES (?,?,?,?,?,?,?,'')",
            (
                user.user_id,
                user.username,
                user.email,
                user.role.value,
                int(user.consent_given),
                int(user.behavior_optin),
                user.registered_at,
            ),
        )

    def restore_document(
        self,
        *,
        document_id: str,
        title: str,
        text_layer: list[str],
        uploaded_by: str,
        uploaded_at: Millis,
        content_hash: str,
        text_layer_empty: bool,
        pdf_bytes: bytes = b"",
    ) -> None:
        self._db.execute(
            "INSERT INTO documents (document_id, title, pdf_bytes, page_count,"
            " uploaded_by, uploaded_at, content_hash, text_layer_empty)"
            " VALUES (?,?,?,?,?,?,?,?)",
            (
                document_id,
                title,
                pdf_bytes,
                len(text_layer),
                uploaded_by,
                uploaded_at,
                content_hash,
                int(text_layer_empty),
            ),
        )
        self._db.executemany(
            "INSERT INTO document_pages (document_id, page_index, text) VALUES (?,?,?)",
            [(document_id, i, t) for i, t in enumerate(text_layer)],
        )

    def restore_commentary(self, c: InlineCommentary) -> None:
        self._db.execute(
            "INSERT INTO commentaries (commentary_id, document_id, author, selectors,"
            " note_text, label_id, tags, parent_id, created_at, updated_at, deleted, origin)"
            " VALUES (?,?,?,?,?,?,?,?,?,?,?,?)",
            (
                c.commentary_id,
                c.document_id,
                c.author,
                selectors_to_json(c.anchor),
                c.note_text,
                c.label_id,
                json.dumps(list(c.tags), ensure_ascii=False),
                c.parent_id,
                c.created_at,
                c.updated_at,
                int(c.deleted),
                c.origin.value,
            ),
        )

    def restore_event(self, event: dict) -> None:
        self._db.execute(
            "INSERT INTO behavior_events (type, ts, client_ts, user_id, document_id, payload)"
            " VALUES (?,?,?,?,?,?)",
            (
                event["type"],
                event["ts"],
                event.get("clientTs"),
                event["userId"],
                event["documentId"],
                json.dumps(event.get("payload") or {}, sort_keys=True, ensure_ascii=False),
            ),
        )

    def user_ids(self) -> set[str]:
        return {r["user_id"] for r in self._all("SELECT user_id FROM users")}

    def document_ids(self) -> set[str]:
        return {r["document_id"] for r in self._all("SELECT document_id FROM documents")}

    def commentary_ids(self) -> set[str]:
        return {r["commentary_id"] for r in self._all("SELECT commentary_id FROM commentaries")}

    # ------------------------------------------------------------ helpers

    def _one(self, sql: str, args: tuple = ()) -> sqlite3.Row | None:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            return self._db.execute(sql, args).fetchone()

    def _all(self, sql: str, args: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            return self._db.execute(sql, args).fetchall()
