"""Single deployable entry point: `care serve` plus admin subcommands.

Admin subcommands run in one of two modes:

* direct (--data-dir): operate on the data directory; only safe while the
  server is stopped (single-writer rule).
* remote (--url + --token): thin HTTP client against a running server's
  admin endpoints.

Every subcommand exits nonzero on failure and prints one machine-parseable
line: `error: {"code": ..., "message": ...}`.
"""

from __future__ import annotations

import base64
import csv
import json
import sys
from pathlib import Path

import click
import httpx

from care import exporting
from care.analytics import analyze_bundle
from care.config import ConfigError, load_config
from care.models import Label, Role
from care.pdftext import PdfError
from care.storage import Storage, StorageError


def fail(code: str, message: str) -> None:
    click.echo("error: " + json.dumps({"code": code, "message": message}), err=True)
    sys.exit(1)


class Target:
    """Either a local data dir or a remote admin API."""

    def __init__(self, data_dir: str | None, url: str | None, token: str | None):
        if url and data_dir:
            fail("config", "pass either --data-dir or --url, not both")
        if url and not token:
            fail("config", "--url needs --token (the installation token)")
        if not url and not data_dir:
            fail("config", "pass --data-dir (stopped server) or --url (running server)")
        self.data_dir = data_dir
        self.url = url.rstrip("/") if url else None
        self.token = token

    def storage(self) -> Storage:
        return Storage(Path(self.data_dir))

    def client(self) -> httpx.Client:
        return httpx.Client(
            base_url=self.url,
            headers={"Authorization": f"Bearer {self.token}"},
            timeout=60.0,
        )

    def post(self, path: str, payload: dict) -> dict:
        with self.client() as client:
            response = client.post(path, json=payload)
        if response.status_code >= 400:
            fail("http", f"{path} -> {response.status_code}: {response.text}")
        return response.json()


target_options = [
    click.option("--data-dir", envvar="CARE_DATA_DIR", default=None,
                 help="Local data directory (server must be stopped)."),
    click.option("--url", envvar="CARE_URL", default=None,
                 help="Base URL of a running server, e.g. http://localhost:8700."),
    click.option("--token", envvar="CARE_BROKER_TOKEN", default=None,
                 help="Installation token for --url mode."),
]


def with_target(fn):
    for option in reversed(target_options):
        fn = option(fn)
    return fn


@click.group()
def main() -> None:
    """Collaborative reading server: documents, inline commentaries, assists."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--listen", "listen_addr", default=None, help="host:port override")
@click.option("--data-dir", default=None)
@click.option("--broker-token", default=None)
@click.option("--session-secret", default=None)
def serve(config_path, listen_addr, data_dir, broker_token, session_secret) -> None:
    """Run the server (readers on /ws, workers on /broker, REST admin)."""
    import uvicorn

    from care.service import create_app

    try:
        config = load_config(
            config_path,
            overrides={
                "listen_addr": listen_addr,
                "data_dir": data_dir,
                "broker_token": broker_token,
                "session_secret": session_secret,
            },
        )
    except ConfigError as exc:
        fail("config", str(exc))
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


@main.command("user-add")
@with_target
@click.argument("username")
@click.option("--email", default="")
@click.option("--password", prompt=False, default="")
@click.option("--role", type=click.Choice(["user", "admin"]), default="user")
@click.option("--consent/--no-consent", default=True,
              help="Record consent acceptance (required for behavior opt-in).")
@click.option("--optin/--no-optin", default=False, help="Behavioral logging opt-in.")
def user_add(data_dir, url, token, username, email, password, role, consent, optin) -> None:
    """Create a user (admin provisioning; self-service uses /register)."""
    t = Target(data_dir, url, token)
    if t.url:
        body = t.post("/admin/users", {
            "username": username, "email": email, "password": password,
            "role": role, "consent_given": consent, "behavior_optin": optin,
        })
        click.echo(body["id"])
        return
    storage = t.storage()
    try:
        user = storage.add_user(
            username, email, password, role=Role(role),
            consent_given=consent, behavior_optin=optin,
        )
    except StorageError as exc:
        fail("user-add", str(exc))
    finally:
        storage.close()
    click.echo(user.user_id)


@main.command("doc-import")
@with_target
@click.argument("pdf_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--title", default=None, help="Defaults to the file name.")
@click.option("--uploader", default=None, help="Uploader username or id.")
def doc_import(data_dir, url, token, pdf_path, title, uploader) -> None:
    """Import a PDF; prints the document id (idempotent by content)."""
    pdf = Path(pdf_path).read_bytes()
    title = title or Path(pdf_path).stem
    t = Target(data_dir, url, token)
    if t.url:
        body = t.post("/admin/documents", {
            "title": title,
            "pdf_base64": base64.b64encode(pdf).decode("ascii"),
            "uploader": uploader,
        })
        click.echo(body["id"])
        return
    storage = t.storage()
    try:
        uploader_id = _resolve_uploader(storage, uploader)
        doc = storage.import_document(pdf, title, uploader_id)
    except (PdfError, StorageError) as exc:
        fail("doc-import", str(exc))
    finally:
        storage.close()
    click.echo(doc.document_id)


def _resolve_uploader(storage: Storage, uploader: str | None) -> str:
    if uploader:
        user = storage.find_user(uploader)
        if user is not None:
            return user.user_id
        return storage.get_user(uploader).user_id  # raises NotFound -> StorageError
    admins = [u for u in storage.list_users() if u.role is Role.ADMIN]
    if not admins:
        raise StorageError("no admin user exists; run user-add --role admin first")
    return admins[0].user_id


@main.command("labelset-add")
@with_target
@click.option("--name", required=True)
@click.option("--label", "labels", multiple=True, required=True,
              help="LABEL_ID:DISPLAY_NAME[:COLOR], repeatable.")
def labelset_add(data_dir, url, token, name, labels) -> None:
    """Create a label set from id:name[:color] triples."""
    parsed = []
    for raw in labels:
        parts = raw.split(":")
        if len(parts) < 2:
            fail("labelset-add", f"bad --label {raw!r}, want ID:DISPLAY[:COLOR]")
        parsed.append(Label(parts[0], parts[1], parts[2] if len(parts) > 2 else "#888888"))
    t = Target(data_dir, url, token)
    if t.url:
        body = t.post("/admin/labelsets", {
            "name": name,
            "labels": [
                {"label_id": l.label_id, "display_name": l.display_name, "color": l.color}
                for l in parsed
            ],
        })
        click.echo(body["labelset_id"])
        return
    storage = t.storage()
    try:
        ls = storage.add_labelset(name, parsed)
    except StorageError as exc:
        fail("labelset-add", str(exc))
    finally:
        storage.close()
    click.echo(ls.labelset_id)


@main.command("study-create")
@with_target
@click.option("--name", required=True)
@click.option("--document", "documents", multiple=True, required=True, help="Document id, repeatable.")
@click.option("--participant", "participants", multiple=True, help="Username, repeatable.")
@click.option("--labelset", required=True)
@click.option("--time-limit-ms", type=int, default=None)
def study_create(data_dir, url, token, name, documents, participants, labelset, time_limit_ms) -> None:
    """Bind documents, participants and a label set into a study."""
    t = Target(data_dir, url, token)
    if t.url:
        body = t.post("/admin/studies", {
            "name": name,
            "document_ids": list(documents),
            "participant_usernames": list(participants),
            "labelset_id": labelset,
            "time_limit_ms": time_limit_ms,
        })
        click.echo(body["study_id"])
        return
    storage = t.storage()
    try:
        participant_ids = []
        for username in participants:
            user = storage.find_user(username)
            if user is None:
                fail("study-create", f"participant {username!r} not found")
            participant_ids.append(user.user_id)
        study = storage.create_study(
            name, list(documents), participant_ids, labelset,
            created_by="cli", time_limit_ms=time_limit_ms,
        )
    except StorageError as exc:
        fail("study-create", str(exc))
    finally:
        storage.close()
    click.echo(study.study_id)


@main.command()
@with_target
@click.argument("out", type=click.Path(dir_okay=False, writable=True))
@click.option("--scope", default="all", help="all | document:ID | user:ID")
@click.option("--include-pdf", is_flag=True, default=False)
@click.option("--identify", is_flag=True, default=False,
              help="Keep real usernames (admin only; default pseudonymizes).")
def export(data_dir, url, token, out, scope, include_pdf, identify) -> None:
    """Write an export bundle (JSON) for the given scope."""
    t = Target(data_dir, url, token)
    if t.url:
        with t.client() as client:
            response = client.get("/admin/export", params={
                "scope": scope, "include_pdf": include_pdf, "identify": identify,
            })
        if response.status_code >= 400:
            fail("http", f"/admin/export -> {response.status_code}: {response.text}")
        Path(out).write_bytes(response.content)
        click.echo(out)
        return
    storage = t.storage()
    try:
        parsed_scope = _parse_scope(scope)
        bundle = exporting.build_bundle(
            storage, parsed_scope, include_pdf=include_pdf, identify=identify
        )
    except (exporting.ExportError, StorageError) as exc:
        fail("export", str(exc))
    finally:
        storage.close()
    Path(out).write_bytes(exporting.bundle_bytes(bundle))
    click.echo(out)


def _parse_scope(scope: str) -> exporting.Scope:
    if scope == "all":
        return ("all", None)
    kind, _, value = scope.partition(":")
    if kind in ("document", "user") and value:
        return (kind, value)
    fail("export", f"bad scope {scope!r} (all | document:ID | user:ID)")


@main.command("import")
@with_target
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
def import_(data_dir, url, token, bundle_path) -> None:
    """Import a bundle (all-or-nothing); prints the import report."""
    bundle = json.loads(Path(bundle_path).read_text(encoding="utf-8"))
    t = Target(data_dir, url, token)
    if t.url:
        report = t.post("/admin/import", bundle)
        click.echo(json.dumps(report, indent=2))
        return
    storage = t.storage()
    try:
        report = exporting.import_bundle(storage, bundle)
    except exporting.ImportRejected as exc:
        fail("import", str(exc))
    finally:
        storage.close()
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Metrics JSON path (default: stdout).")
@click.option("--bins", type=int, default=10, show_default=True)
@click.option("--csv-dir", type=click.Path(file_okay=False), default=None,
              help="Also write one CSV per metric into this directory.")
def analyze(bundle_path, out, bins, csv_dir) -> None:
    """Compute reading/commenting metrics from an export bundle."""
    try:
        bundle = json.loads(Path(bundle_path).read_text(encoding="utf-8"))
        metrics = analyze_bundle(bundle, bins=bins)
    except (json.JSONDecodeError, ValueError) as exc:
        fail("analyze", str(exc))
    rendered = json.dumps(metrics, indent=2, ensure_ascii=False)
    if out:
        Path(out).write_text(rendered + "\n", encoding="utf-8")
        click.echo(out)
    else:
        click.echo(rendered)
    if csv_dir:
        _write_csvs(metrics, Path(csv_dir))


def _write_csvs(metrics: dict, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    hist = metrics["reltime_histogram"]
    with open(directory / "reltime_histogram.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "bin_end", "count"])
        for i, count in enumerate(hist["counts"]):
            writer.writerow([i / hist["bins"], (i + 1) / hist["bins"], count])
    with open(directory / "page_reading_times.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "document_id", "page_index", "share"])
        for window in metrics["page_reading_times"]["perWindow"]:
            for page, share in window["values"].items():
                writer.writerow([window["userId"], window["documentId"], page, share])
    with open(directory / "task_timings.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["user_id", "document_id", "time_to_completion_ms", "time_to_first_interaction_ms", "synthetic_leave"]
        )
        for r in metrics["task_timings"]["records"]:
            writer.writerow(
                [r["userId"], r["documentId"], r["timeToCompletionMs"], r["timeToFirstInteractionMs"], r["syntheticLeave"]]
            )
    with open(directory / "deletion_rate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["deletion_rate"])
        writer.writerow([metrics["deletion_rate"]])


if __name__ == "__main__":
    main()
