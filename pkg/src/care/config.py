"""Server configuration: key=value file, CARE_* env overrides, CLI flags.

Precedence (lowest to highest): built-in defaults, config file, environment,
explicit overrides. Validation is fail-fast: a server never starts half
configured.

File format, one `key = value` per line (# starts a comment, quotes
optional):

    listen_addr = "127.0.0.1:8700"
    data_dir = ./care-data
    broker_token = change-me
    session_secret = also-change-me
    consent_text_path = ./consent.txt
    label_sets_path = ./labelsets.json
    assist_timeout = 30s
    behavior_logging_default = off
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from care.models import Label, LabelSet

ENV_PREFIX = "CARE_"

KEYS = (
    "listen_addr",
    "data_dir",
    "broker_token",
    "session_secret",
    "consent_text_path",
    "label_sets_path",
    "assist_timeout",
    "behavior_logging_default",
)

DEFAULT_CONSENT_TEXT = (
    "Sample informed consent\n"
    "=======================\n"
    "By registering you agree that the documents you read and the inline\n"
    "commentaries you write on this instance are stored by its operator and\n"
    "may be exported for research in pseudonymized form. Collection of\n"
    "behavioral statistics (page views, navigation clicks, commentary\n"
    "timing) is optional and happens only if you opt in explicitly.\n"
    "Operators: replace this text via consent_text_path before any study.\n"
)


class ConfigError(ValueError):
    pass


@dataclass
class ServerConfig:
    listen_addr: str = "127.0.0.1:8700"
    data_dir: Path = Path("./care-data")
    broker_token: str = ""
    session_secret: str = ""
    consent_text_path: Path | None = None
    label_sets_path: Path | None = None
    assist_timeout_ms: int = 30_000
    behavior_logging_default: bool = False
    label_sets: list[LabelSet] = field(default_factory=list)

    @property
    def host(self) -> str:
        return self.listen_addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_addr.rsplit(":", 1)[1])

    def consent_text(self) -> str:
        if self.consent_text_path is not None:
            return Path(self.consent_text_path).read_text(encoding="utf-8")
        return DEFAULT_CONSENT_TEXT


def parse_duration_ms(raw: str | int) -> int:
    if isinstance(raw, int):
        return raw
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(ms|s|m)?\s*", raw)
    if m is None:
        raise ConfigError(f"cannot parse duration {raw!r} (use e.g. 30s, 500ms)")
    value = float(m.group(1))
    unit = m.group(2) or "s"
    factor = {"ms": 1, "s": 1000, "m": 60_000}[unit]
    return int(value * factor)


def parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip().strip("\"'")
    return values


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("on", "true", "1", "yes"):
        return True
    if lowered in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"{key} must be on/off, got {raw!r}")


def load_label_sets(path: Path) -> list[LabelSet]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read label sets from {path}: {exc}") from exc
    sets = []
    for i, entry in enumerate(data):
        try:
            sets.append(
                LabelSet(
                    labelset_id=entry.get("labelset_id", f"labelset-{i + 1}"),
                    name=entry["name"],
                    labels=tuple(
                        Label(l["label_id"], l["display_name"], l.get("color", "#888888"))
                        for l in entry["labels"]
                    ),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"label set entry {i} invalid: {exc}") from exc
    return sets


def load_config(
    path: str | Path | None = None,
    *,
    env: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
) -> ServerConfig:
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    if path is not None:
        values.update(parse_config_file(Path(path)))
    for key in KEYS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = env[env_key]
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = str(value)

    cfg = ServerConfig()
    if "listen_addr" in values:
        cfg.listen_addr = values["listen_addr"]
    if ":" not in cfg.listen_addr:
        raise ConfigError(f"listen_addr needs host:port, got {cfg.listen_addr!r}")
    if "data_dir" in values:
        cfg.data_dir = Path(values["data_dir"])
    cfg.broker_token = values.get("broker_token", "")
    cfg.session_secret = values.get("session_secret", "")
    if "consent_text_path" in values:
        cfg.consent_text_path = Path(values["consent_text_path"])
    if "label_sets_path" in values:
        cfg.label_sets_path = Path(values["label_sets_path"])
    if "assist_timeout" in values:
        cfg.assist_timeout_ms = parse_duration_ms(values["assist_timeout"])
    if "behavior_logging_default" in values:
        cfg.behavior_logging_default = _parse_bool(
            values["behavior_logging_default"], "behavior_logging_default"
        )

    if not cfg.broker_token:
        raise ConfigError("broker_token must be set (installation token)")
    if not cfg.session_secret:
        raise ConfigError("session_secret must be set")
    if cfg.assist_timeout_ms <= 0:
        raise ConfigError("assist_timeout must be positive")
    if cfg.consent_text_path is not None and not Path(cfg.consent_text_path).is_file():
        raise ConfigError(f"consent_text_path does not exist: {cfg.consent_text_path}")
    _check_writable(cfg.data_dir)
    if cfg.label_sets_path is not None:
        cfg.label_sets = load_label_sets(cfg.label_sets_path)
    return cfg


def _check_writable(data_dir: Path) -> None:
    try:
        data_dir.mkdir(parents=True, exist_ok=True)
        probe = data_dir / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"data_dir not writable: {data_dir} ({exc})") from exc
