"""Machine-readable export bundles and their all-or-nothing import.

The bundle is a single UTF-8 JSON document with top-level keys
{version, exported_at, documents, annotations, behavior_events, users}.
Ordering is deterministic (two exports with no intervening writes are
byte-identical modulo exported_at), tombstoned annotations are included,
and behavior events of non-opt-in users never appear.

Usernames and e-mails are replaced by stable per-bundle pseudonyms
("user-0001" in sorted-user_id order) unless the caller identifies the
export explicitly. PDF bytes are omitted unless requested; the extracted
text layer always travels with the document so anchors stay resolvable.
"""

from __future__ import annotations

import base64
import json
from typing import Callable

from care.models import (
    Document,
    InlineCommentary,
    Millis,
    Origin,
    Role,
    User,
    new_id,
    now_ms,
)
from care.storage import Storage, selectors_from_json, selectors_to_json

BUNDLE_VERSION = "care-export/1"

Scope = tuple[str, str | None]  # ("all", None) | ("document", id) | ("user", id)


class ExportError(Exception):
    pass


class ImportRejected(Exception):
    pass


def annotation_json(c: InlineCommentary) -> dict:
    """The frozen wire/export shape of a commentary (also used by broadcasts)."""
    raw = selectors_to_json(c.anchor)
    return {
        "id": c.commentary_id,
        "documentId": c.document_id,
        "userId": c.author,
        "selectors": json.loads(raw) if raw is not None else None,
        "text": c.note_text,
        "label": c.label_id,
        "tags": list(c.tags),
        "createdAt": c.created_at,
        "updatedAt": c.updated_at,
        "parentId": c.parent_id,
        "deleted": c.deleted,
        "origin": c.origin.value,
    }


def document_json(doc: Document, *, include_pdf: bool = False) -> dict:
    out = {
        "id": doc.document_id,
        "title": doc.title,
        "pageCount": doc.page_count,
        "textLayer": list(doc.text_layer),
        "uploadedBy": doc.uploaded_by,
        "uploadedAt": doc.uploaded_at,
        "contentHash": doc.content_hash,
        "textLayerEmpty": doc.text_layer_empty,
    }
    if include_pdf:
        out["pdfBytes"] = base64.b64encode(doc.pdf_bytes or b"").decode("ascii")
    return out


def user_json(user: User, pseudonym: str | None) -> dict:
    return {
        "id": user.user_id,
        "username": pseudonym if pseudonym is not None else user.username,
        "email": "" if pseudonym is not None else user.email,
        "role": user.role.value,
        "consentGiven": user.consent_given,
        "behaviorOptin": user.behavior_optin,
        "registeredAt": user.registered_at,
    }


def build_bundle(
    storage: Storage,
    scope: Scope = ("all", None),
    *,
    include_pdf: bool = False,
    identify: bool = False,
    exported_at: Millis | None = None,
) -> dict:
    kind, target = scope
    if kind == "all":
        annotations = storage.all_commentaries()
        events = storage.events()
        doc_ids = {d.document_id for d in storage.list_documents()}
        user_ids = {u.user_id for u in storage.list_users()}
    elif kind == "document":
        storage.get_document(target)
        annotations = storage.all_commentaries(target)
        events = storage.events(document_id=target)
        doc_ids = {target}
        user_ids = set()
    elif kind == "user":
        storage.get_user(target)
        annotations = [c for c in storage.all_commentaries() if c.author == target]
        events = storage.events(user_id=target)
        doc_ids = set()
        user_ids = {target}
    else:
        raise ExportError(f"unknown scope {kind}")

    # Defense in depth: the store already gates ingestion on opt-in.
    optin = {u.user_id for u in storage.list_users() if u.behavior_optin}
    events = [e for e in events if e["userId"] in optin]

    doc_ids |= {c.document_id for c in annotations} | {e["documentId"] for e in events}
    user_ids |= {c.author for c in annotations} | {e["userId"] for e in events}

    users = sorted(
        (u for u in storage.list_users() if u.user_id in user_ids),
        key=lambda u: u.user_id,
    )
    pseudonyms: dict[str, str | None]
    if identify:
        pseudonyms = {u.user_id: None for u in users}
    else:
        pseudonyms = {u.user_id: f"user-{i + 1:04d}" for i, u in enumerate(users)}

    documents = sorted(
        (storage.get_document(d, with_pdf=include_pdf) for d in doc_ids),
        key=lambda d: d.document_id,
    )
    annotations = sorted(
        annotations, key=lambda c: (c.document_id, c.created_at, c.commentary_id)
    )
    events = sorted(
        events,
        key=lambda e: (
            e["ts"],
            e["userId"],
            e["documentId"],
            e["type"],
            json.dumps(e["payload"], sort_keys=True),
        ),
    )

    return {
        "version": BUNDLE_VERSION,
        "exported_at": exported_at if exported_at is not None else now_ms(),
        "documents": [document_json(d, include_pdf=include_pdf) for d in documents],
        "annotations": [annotation_json(c) for c in annotations],
        "behavior_events": [
            {
                "type": e["type"],
                "ts": e["ts"],
                "clientTs": e["clientTs"],
                "userId": e["userId"],
                "documentId": e["documentId"],
                "payload": e["payload"],
            }
            for e in events
        ],
        "users": [user_json(u, pseudonyms[u.user_id]) for u in users],
    }


def bundle_bytes(bundle: dict) -> bytes:
    return (json.dumps(bundle, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def import_bundle(
    storage: Storage, bundle: dict, *, id_factory: Callable[[], str] = new_id
) -> dict:
    """Insert a bundle's entities; id collisions are remapped consistently.

    All-or-nothing: any schema or reference problem rejects the whole
    bundle. Documents are content-addressed, so a colliding document id
    means the document is already present and the row is merged instead
    of duplicated.
    """
    if bundle.get("version") != BUNDLE_VERSION:
        raise ImportRejected(f"unsupported bundle version: {bundle.get('version')!r}")

    bundle_users = bundle.get("users", [])
    bundle_docs = bundle.get("documents", [])
    bundle_anns = bundle.get("annotations", [])
    bundle_events = bundle.get("behavior_events", [])

    user_ids = {u["id"] for u in bundle_users}
    doc_ids = {d["id"] for d in bundle_docs}
    ann_ids = {a["id"] for a in bundle_anns}
    for a in bundle_anns:
        if a["documentId"] not in doc_ids:
            raise ImportRejected(f"dangling-reference: annotation {a['id']} -> document")
        if a["userId"] not in user_ids:
            raise ImportRejected(f"dangling-reference: annotation {a['id']} -> user")
        if a.get("parentId") is not None and a["parentId"] not in ann_ids:
            raise ImportRejected(f"dangling-reference: annotation {a['id']} -> parent")
    for e in bundle_events:
        if e["userId"] not in user_ids or e["documentId"] not in doc_ids:
            raise ImportRejected("dangling-reference: behavior event")

    optin_users = {u["id"] for u in bundle_users if u.get("behaviorOptin")}

    user_map: dict[str, str] = {}
    ann_map: dict[str, str] = {}
    existing_users = storage.user_ids()
    existing_docs = storage.document_ids()
    existing_anns = storage.commentary_ids()
    for u in bundle_users:
        user_map[u["id"]] = id_factory() if u["id"] in existing_users else u["id"]
    for a in bundle_anns:
        ann_map[a["id"]] = id_factory() if a["id"] in existing_anns else a["id"]

    counts = {
        "users": 0,
        "users_remapped": 0,
        "documents": 0,
        "documents_merged": 0,
        "annotations": 0,
        "annotations_remapped": 0,
        "behavior_events": 0,
        "behavior_events_dropped": 0,
    }

    with storage.restore_transaction():
        for u in bundle_users:
            mapped = user_map[u["id"]]
            if mapped != u["id"]:
                counts["users_remapped"] += 1
            storage.restore_user(
                User(
                    user_id=mapped,
                    username=u["username"] if mapped == u["id"] else f"{u['username']}-{mapped[:8]}",
                    email=u.get("email", ""),
                    role=Role(u.get("role", "user")),
                    consent_given=bool(u.get("consentGiven")),
                    behavior_optin=bool(u.get("behaviorOptin")),
                    registered_at=u.get("registeredAt", 0),
                )
            )
            counts["users"] += 1
        for d in bundle_docs:
            if d["id"] in existing_docs:
                counts["documents_merged"] += 1
                continue
            storage.restore_document(
                document_id=d["id"],
                title=d["title"],
                text_layer=list(d["textLayer"]),
                uploaded_by=user_map.get(d["uploadedBy"], d["uploadedBy"]),
                uploaded_at=d["uploadedAt"],
                content_hash=d["contentHash"],
                text_layer_empty=bool(d.get("textLayerEmpty")),
                pdf_bytes=base64.b64decode(d["pdfBytes"]) if d.get("pdfBytes") else b"",
            )
            counts["documents"] += 1
        for a in bundle_anns:
            mapped = ann_map[a["id"]]
            if mapped != a["id"]:
                counts["annotations_remapped"] += 1
            storage.restore_commentary(
                InlineCommentary(
                    commentary_id=mapped,
                    document_id=a["documentId"],
                    author=user_map[a["userId"]],
                    anchor=selectors_from_json(a.get("selectors")),
                    note_text=a.get("text"),
                    label_id=a.get("label"),
                    tags=tuple(a.get("tags", [])),
                    parent_id=ann_map[a["parentId"]] if a.get("parentId") else None,
                    created_at=a["createdAt"],
                    updated_at=a["updatedAt"],
                    deleted=bool(a.get("deleted")),
                    origin=Origin(a.get("origin", "human")),
                )
            )
            counts["annotations"] += 1
        for e in bundle_events:
            if e["userId"] not in optin_users:
                counts["behavior_events_dropped"] += 1
                continue
            storage.restore_event(
                {
                    "type": e["type"],
                    "ts": e["ts"],
                    "clientTs": e.get("clientTs"),
                    "userId": user_map[e["userId"]],
                    "documentId": e["documentId"],
                    "payload": e.get("payload") or {},
                }
            )
            counts["behavior_events"] += 1

    counts["remaps"] = {
        "users": {k: v for k, v in user_map.items() if k != v},
        "annotations": {k: v for k, v in ann_map.items() if k != v},
    }
    return counts
