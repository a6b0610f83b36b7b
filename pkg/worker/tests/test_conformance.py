"""The reference worker must pass the broker's golden-exchange suite.

The harness (`python -m care.conformance`) is consumed strictly as a CLI,
i.e. through the server package's external interface.
"""

import json
import socket
import subprocess
import sys
import time
from pathlib import Path

GOLDEN = Path(__file__).parent / "golden.json"
TOKEN = "conformance-token"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_worker_passes_conformance_suite():
    port = free_port()
    harness = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "care.conformance",
            "--port",
            str(port),
            "--token",
            TOKEN,
            "--golden",
            str(GOLDEN),
            "--heartbeat-ms",
            "300",
            "--timeout",
            "20",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    worker = None
    try:
        assert "listening" in harness.stdout.readline()
        worker = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "care_worker.cli",
                "--broker-url",
                f"ws://127.0.0.1:{port}/broker",
                "--token",
                TOKEN,
            ],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        out, err = harness.communicate(timeout=40)
        lines = [json.loads(l) for l in out.splitlines() if l.strip()]
        verdict = lines[-1]
        failures = [l for l in lines if "check" in l and not l["ok"]]
        assert verdict.get("conformance") == "pass", f"failed checks: {failures}\n{err}"
        assert harness.returncode == 0
    finally:
        if worker is not None:
            worker.kill()
            worker.wait()
        if harness.poll() is None:
            harness.kill()


def test_worker_exits_nonzero_on_bad_token():
    port = free_port()
    harness = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "care.conformance",
            "--port",
            str(port),
            "--token",
            TOKEN,
            "--timeout",
            "15",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    try:
        assert "listening" in harness.stdout.readline()
        worker = subprocess.run(
            [
                sys.executable,
                "-m",
                "care_worker.cli",
                "--broker-url",
                f"ws://127.0.0.1:{port}/broker",
                "--token",
                "not-the-token",
            ],
            capture_output=True,
            text=True,
            timeout=20,
        )
        assert worker.returncode == 2
        assert "rejected" in worker.stderr.lower()
    finally:
        if harness.poll() is None:
            harness.kill()
            harness.wait()


def test_missing_token_is_fatal_immediately():
    result = subprocess.run(
        [sys.executable, "-m", "care_worker.cli", "--token", ""],
        capture_output=True,
        text=True,
        timeout=15,
    )
    assert result.returncode == 2
    assert "token" in result.stderr.lower()
