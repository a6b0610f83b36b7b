"""HTTP/WebSocket service: /ws for readers, /broker for workers, REST admin.

The FastAPI app wraps the sans-io hub and broker. One asyncio lock
serializes every hub/broker call (single logical writer); per-connection
writer tasks drain outbound queues so frame order per session is always
preserved no matter which handler produced the frames.

Admin endpoints authenticate with the installation token (Bearer).
User-facing endpoints use HTTP Basic against registered credentials.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import json
import logging
from contextlib import asynccontextmanager

from fastapi import Depends, FastAPI, HTTPException, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from care import exporting
from care.broker import Broker, BrokerRejected
from care.config import ServerConfig
from care.hub import Hub, Outbound
from care.models import Label, Role
from care.pdftext import PdfError
from care.storage import NotFound, Storage, StorageError

log = logging.getLogger(__name__)

TICK_INTERVAL_S = 1.0


# ------------------------------------------------------------- API models


class RegisterRequest(BaseModel):
    username: str = Field(min_length=1, max_length=128)
    email: str = ""
    password: str = Field(min_length=1)
    accept_consent: bool
    behavior_optin: bool | None = None


class UserOut(BaseModel):
    id: str
    username: str
    email: str
    role: str
    consent_given: bool
    behavior_optin: bool
    registered_at: int


class AdminUserRequest(BaseModel):
    username: str
    email: str = ""
    password: str = ""
    role: str = "user"
    consent_given: bool = False
    behavior_optin: bool = False


class DocumentUpload(BaseModel):
    title: str
    pdf_base64: str
    uploader: str | None = None  # defaults to the first admin


class DocumentOut(BaseModel):
    id: str
    title: str
    page_count: int
    uploaded_by: str
    uploaded_at: int
    content_hash: str
    text_layer_empty: bool


class LabelIn(BaseModel):
    label_id: str
    display_name: str
    color: str = "#888888"


class LabelSetRequest(BaseModel):
    name: str
    labels: list[LabelIn]
    labelset_id: str | None = None


class LabelSetOut(BaseModel):
    labelset_id: str
    name: str
    labels: list[LabelIn]


class StudyRequest(BaseModel):
    name: str
    document_ids: list[str]
    participant_usernames: list[str] = []
    participant_ids: list[str] = []
    labelset_id: str
    time_limit_ms: int | None = None


class StudyOut(BaseModel):
    study_id: str
    name: str
    document_ids: list[str]
    participant_ids: list[str]
    labelset_id: str
    time_limit_ms: int | None


class ImportReport(BaseModel):
    users: int
    users_remapped: int
    documents: int
    documents_merged: int
    annotations: int
    annotations_remapped: int
    behavior_events: int
    behavior_events_dropped: int
    remaps: dict


# --------------------------------------------------------------- the app


def create_app(
    config: ServerConfig,
    *,
    storage: Storage | None = None,
) -> FastAPI:
    storage = storage or Storage(config.data_dir)
    broker = Broker(config.broker_token, assist_timeout_ms=config.assist_timeout_ms)
    hub = Hub(storage, broker)
    _seed_label_sets(storage, config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.tick_task = asyncio.create_task(_tick_loop(app))
        yield
        app.state.tick_task.cancel()
        storage.close()

    app = FastAPI(title="care-server", lifespan=lifespan)
    app.state.config = config
    app.state.storage = storage
    app.state.broker = broker
    app.state.hub = hub
    app.state.lock = asyncio.Lock()
    app.state.client_queues = {}
    app.state.worker_queues = {}

    _mount_routes(app)
    static_dir = config.data_dir / "static"
    if static_dir.is_dir():
        app.mount("/app", StaticFiles(directory=static_dir, html=True), name="app")
    return app


def _seed_label_sets(storage: Storage, config: ServerConfig) -> None:
    existing = {ls.labelset_id for ls in storage.list_labelsets()}
    for ls in config.label_sets:
        if ls.labelset_id not in existing:
            storage.add_labelset(ls.name, ls.labels, labelset_id=ls.labelset_id)


async def _tick_loop(app: FastAPI) -> None:
    while True:
        await asyncio.sleep(TICK_INTERVAL_S)
        try:
            async with app.state.lock:
                out = app.state.hub.tick()
            _deliver(app, out)
        except asyncio.CancelledError:
            raise
        except Exception:  # pragma: no cover - defensive
            log.exception("tick failed")


def _deliver(app: FastAPI, outbounds: list[Outbound]) -> None:
    """Fan frames out to per-connection queues (order preserved per target)."""
    for target, message in outbounds:
        if message.get("worker"):
            queue = app.state.worker_queues.get(target)
            if queue is not None:
                queue.put_nowait({k: v for k, v in message.items() if k != "worker"})
        else:
            queue = app.state.client_queues.get(target)
            if queue is not None:
                queue.put_nowait(message)


async def _writer(ws: WebSocket, queue: asyncio.Queue) -> None:
    while True:
        message = await queue.get()
        await ws.send_text(json.dumps(message, ensure_ascii=False))


def _mount_routes(app: FastAPI) -> None:
    state = app.state

    # ------------------------------------------------------------ helpers

    def require_admin_token(request: Request) -> None:
        auth = request.headers.get("authorization", "")
        expected = f"Bearer {state.config.broker_token}"
        import hmac as _hmac

        if not _hmac.compare_digest(auth.encode(), expected.encode()):
            raise HTTPException(401, "admin endpoints require the installation token")

    def basic_auth_user(request: Request):
        header = request.headers.get("authorization", "")
        if not header.startswith("Basic "):
            raise HTTPException(401, "basic auth required", headers={"WWW-Authenticate": "Basic"})
        try:
            decoded = base64.b64decode(header[6:]).decode("utf-8")
            username, _, password = decoded.partition(":")
        except (binascii.Error, UnicodeDecodeError):
            raise HTTPException(401, "malformed basic auth header")
        user = state.storage.authenticate_user(username, password)
        if user is None:
            raise HTTPException(401, "bad credentials")
        return user

    def user_out(u) -> UserOut:
        return UserOut(
            id=u.user_id,
            username=u.username,
            email=u.email,
            role=u.role.value,
            consent_given=u.consent_given,
            behavior_optin=u.behavior_optin,
            registered_at=u.registered_at,
        )

    def doc_out(d) -> DocumentOut:
        return DocumentOut(
            id=d.document_id,
            title=d.title,
            page_count=d.page_count,
            uploaded_by=d.uploaded_by,
            uploaded_at=d.uploaded_at,
            content_hash=d.content_hash,
            text_layer_empty=d.text_layer_empty,
        )

    def parse_scope(scope: str) -> exporting.Scope:
        if scope == "all":
            return ("all", None)
        kind, _, target = scope.partition(":")
        if kind in ("document", "user") and target:
            return (kind, target)
        raise HTTPException(400, f"bad scope {scope!r} (all | document:ID | user:ID)")

    def visible_documents(user):
        docs = state.storage.list_documents()
        if user.role is Role.ADMIN:
            return docs
        studies = state.storage.list_studies()
        out = []
        for d in docs:
            bound = [s for s in studies if d.document_id in s.document_ids]
            if not bound or any(user.user_id in s.participant_ids for s in bound):
                out.append(d)
            elif d.uploaded_by == user.user_id:
                out.append(d)
        return out

    # ------------------------------------------------------------- public

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz() -> str:
        return "ok"

    @app.get("/consent")
    def consent() -> dict:
        return {"consent_text": state.config.consent_text()}

    @app.post("/register", response_model=UserOut, status_code=201)
    def register(body: RegisterRequest):
        if not body.accept_consent:
            raise HTTPException(400, "registration requires accepting the consent text")
        optin = (
            body.behavior_optin
            if body.behavior_optin is not None
            else state.config.behavior_logging_default
        )
        try:
            user = state.storage.add_user(
                body.username,
                body.email,
                body.password,
                consent_given=True,
                behavior_optin=optin,
                consent_receipt_key=state.config.session_secret.encode(),
            )
        except StorageError as exc:
            raise HTTPException(409, str(exc))
        return user_out(user)

    # -------------------------------------------------------------- admin

    @app.post("/admin/users", response_model=UserOut, status_code=201,
              dependencies=[Depends(require_admin_token)])
    def admin_add_user(body: AdminUserRequest):
        try:
            user = state.storage.add_user(
                body.username,
                body.email,
                body.password,
                role=Role(body.role),
                consent_given=body.consent_given,
                behavior_optin=body.behavior_optin,
                consent_receipt_key=state.config.session_secret.encode(),
            )
        except (StorageError, ValueError) as exc:
            raise HTTPException(409, str(exc))
        return user_out(user)

    @app.get("/admin/users", response_model=list[UserOut],
             dependencies=[Depends(require_admin_token)])
    def admin_list_users():
        return [user_out(u) for u in state.storage.list_users()]

    @app.post("/admin/documents", response_model=DocumentOut, status_code=201,
              dependencies=[Depends(require_admin_token)])
    def admin_upload_document(body: DocumentUpload):
        uploader = body.uploader
        if uploader is None:
            admins = [u for u in state.storage.list_users() if u.role is Role.ADMIN]
            if not admins:
                raise HTTPException(400, "no admin user exists; create one or pass uploader")
            uploader = admins[0].user_id
        else:
            found = state.storage.find_user(uploader)
            if found is not None:
                uploader = found.user_id
            else:
                try:
                    state.storage.get_user(uploader)
                except NotFound:
                    raise HTTPException(404, f"uploader {body.uploader!r} not found")
        try:
            pdf = base64.b64decode(body.pdf_base64)
        except binascii.Error:
            raise HTTPException(400, "pdf_base64 is not valid base64")
        try:
            doc = state.storage.import_document(pdf, body.title, uploader)
        except PdfError as exc:
            raise HTTPException(422, f"not an importable PDF: {exc}")
        return doc_out(doc)

    @app.get("/admin/documents", response_model=list[DocumentOut],
             dependencies=[Depends(require_admin_token)])
    def admin_list_documents():
        return [doc_out(d) for d in state.storage.list_documents()]

    @app.post("/admin/labelsets", response_model=LabelSetOut, status_code=201,
              dependencies=[Depends(require_admin_token)])
    def admin_add_labelset(body: LabelSetRequest):
        try:
            ls = state.storage.add_labelset(
                body.name,
                [Label(l.label_id, l.display_name, l.color) for l in body.labels],
                labelset_id=body.labelset_id,
            )
        except (StorageError, ValueError) as exc:
            raise HTTPException(409, str(exc))
        return LabelSetOut(
            labelset_id=ls.labelset_id,
            name=ls.name,
            labels=[LabelIn(label_id=l.label_id, display_name=l.display_name, color=l.color) for l in ls.labels],
        )

    @app.get("/admin/labelsets", response_model=list[LabelSetOut],
             dependencies=[Depends(require_admin_token)])
    def admin_list_labelsets():
        return [
            LabelSetOut(
                labelset_id=ls.labelset_id,
                name=ls.name,
                labels=[LabelIn(label_id=l.label_id, display_name=l.display_name, color=l.color) for l in ls.labels],
            )
            for ls in state.storage.list_labelsets()
        ]

    @app.post("/admin/studies", response_model=StudyOut, status_code=201,
              dependencies=[Depends(require_admin_token)])
    def admin_create_study(body: StudyRequest):
        participant_ids = list(body.participant_ids)
        for username in body.participant_usernames:
            user = state.storage.find_user(username)
            if user is None:
                raise HTTPException(404, f"participant {username!r} not found")
            participant_ids.append(user.user_id)
        try:
            study = state.storage.create_study(
                body.name,
                body.document_ids,
                participant_ids,
                body.labelset_id,
                created_by="admin-api",
                time_limit_ms=body.time_limit_ms,
            )
        except NotFound as exc:
            raise HTTPException(404, str(exc))
        return StudyOut(
            study_id=study.study_id,
            name=study.name,
            document_ids=list(study.document_ids),
            participant_ids=list(study.participant_ids),
            labelset_id=study.labelset_id,
            time_limit_ms=study.time_limit_ms,
        )

    @app.get("/admin/export", dependencies=[Depends(require_admin_token)])
    def admin_export(
        scope: str = Query("all"),
        include_pdf: bool = Query(False),
        identify: bool = Query(False),
    ):
        bundle = exporting.build_bundle(
            state.storage, parse_scope(scope), include_pdf=include_pdf, identify=identify
        )
        return Response(exporting.bundle_bytes(bundle), media_type="application/json")

    @app.post("/admin/import", response_model=ImportReport,
              dependencies=[Depends(require_admin_token)])
    def admin_import(bundle: dict):
        try:
            report = exporting.import_bundle(state.storage, bundle)
        except exporting.ImportRejected as exc:
            raise HTTPException(422, str(exc))
        return ImportReport(**report)

    @app.get("/admin/registry", dependencies=[Depends(require_admin_token)])
    def admin_registry():
        return state.broker.registry()

    # ---------------------------------------------------- user-facing REST

    @app.get("/documents", response_model=list[DocumentOut])
    def list_documents(user=Depends(basic_auth_user)):
        return [doc_out(d) for d in visible_documents(user)]

    @app.get("/documents/{document_id}/text")
    def document_text(document_id: str, user=Depends(basic_auth_user)):
        if document_id not in {d.document_id for d in visible_documents(user)}:
            raise HTTPException(404, "no such document")
        doc = state.storage.get_document(document_id)
        return {"id": doc.document_id, "title": doc.title, "pages": list(doc.text_layer)}

    @app.get("/documents/{document_id}/pdf")
    def document_pdf(document_id: str, user=Depends(basic_auth_user)):
        if document_id not in {d.document_id for d in visible_documents(user)}:
            raise HTTPException(404, "no such document")
        doc = state.storage.get_document(document_id, with_pdf=True)
        return Response(doc.pdf_bytes or b"", media_type="application/pdf")

    @app.get("/labelsets", response_model=list[LabelSetOut])
    def list_labelsets(user=Depends(basic_auth_user)):
        return admin_list_labelsets()

    @app.get("/export/me")
    def export_me(user=Depends(basic_auth_user)):
        bundle = exporting.build_bundle(
            state.storage, ("user", user.user_id), identify=True
        )
        return Response(exporting.bundle_bytes(bundle), media_type="application/json")

    # ---------------------------------------------------------- websockets

    @app.websocket("/ws")
    async def ws_clients(ws: WebSocket):
        await ws.accept()
        async with state.lock:
            session_id = state.hub.connect()
        queue: asyncio.Queue = asyncio.Queue()
        state.client_queues[session_id] = queue
        writer = asyncio.create_task(_writer(ws, queue))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    message = json.loads(raw)
                except json.JSONDecodeError:
                    queue.put_nowait(
                        {
                            "type": "error",
                            "payload": {"code": "malformed-message", "message": "frame is not JSON"},
                        }
                    )
                    continue
                async with state.lock:
                    out = state.hub.handle(session_id, message)
                _deliver(app, out)
        except WebSocketDisconnect:
            pass
        finally:
            writer.cancel()
            state.client_queues.pop(session_id, None)
            async with state.lock:
                state.hub.disconnect(session_id)

    @app.websocket("/broker")
    async def ws_workers(ws: WebSocket):
        await ws.accept()
        try:
            raw = await ws.receive_text()
        except WebSocketDisconnect:
            return
        try:
            frame = json.loads(raw)
        except json.JSONDecodeError:
            frame = {}
        if frame.get("type") != "register":
            await ws.send_text(json.dumps({"type": "rejected", "reason": "register first"}))
            await ws.close()
            return
        async with state.lock:
            try:
                node_id, sends = state.broker.register(
                    str(frame.get("token", "")),
                    frame.get("skills") or [],
                    node_id=frame.get("node_id"),
                )
            except (BrokerRejected, KeyError, TypeError) as exc:
                await ws.send_text(json.dumps({"type": "rejected", "reason": str(exc)}))
                await ws.close()
                return
        queue: asyncio.Queue = asyncio.Queue()
        state.worker_queues[node_id] = queue
        for send in sends:
            queue.put_nowait(send.frame)
        writer = asyncio.create_task(_writer(ws, queue))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    frame = json.loads(raw)
                except json.JSONDecodeError:
                    continue
                kind = frame.get("type")
                async with state.lock:
                    if kind == "heartbeat":
                        state.broker.heartbeat(node_id)
                        out = []
                    elif kind == "result":
                        out = state.hub.on_broker_events(
                            state.broker.handle_result(node_id, frame)
                        )
                    else:
                        out = []
                _deliver(app, out)
        except WebSocketDisconnect:
            pass
        finally:
            writer.cancel()
            state.worker_queues.pop(node_id, None)
            async with state.lock:
                out = state.hub.on_broker_events(state.broker.disconnect(node_id))
            _deliver(app, out)


__all__ = ["create_app"]
