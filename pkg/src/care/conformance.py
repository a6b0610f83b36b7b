"""Worker conformance harness: a scripted broker any worker must satisfy.

Run `python -m care.conformance --port P --token T` and point the worker
under test at ws://127.0.0.1:P/broker. The harness plays the broker side
of the wire protocol and checks, in order:

  1. register     first frame, correct token, >=1 skill with full schemas
  2. registered   harness assigns the node id and a heartbeat interval
  3. heartbeat    at least one within 2x the announced interval
  4. job/result   one probe job per advertised skill; the result must
                  correlate by job_id and carry output or error
  5. golden jobs  optional --golden file with exact payload->output pairs

It prints one JSON line per check and a final verdict line, exiting 0
only if every check passed. See docs/broker-protocol.md for the frame
reference.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

try:
    import websockets
except ImportError as exc:  # pragma: no cover
    raise SystemExit("conformance harness needs the websockets package") from exc

PROBE_VALUES = {
    "string": "probe",
    "text": "probe text for conformance",
    "number": 0,
    "int": 0,
    "float": 0.0,
    "bool": False,
    "string[]": [],
    "list": [],
    "object": {},
    "map": {},
}


def probe_payload(input_schema: dict) -> dict:
    return {field: PROBE_VALUES.get(str(kind), "probe") for field, kind in input_schema.items()}


class Conformance:
    def __init__(self, token: str, golden: list[dict], heartbeat_interval_ms: int = 500):
        self.token = token
        self.golden = golden
        self.heartbeat_interval_ms = heartbeat_interval_ms
        self.checks: list[dict] = []
        self.done = asyncio.Event()

    def record(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append({"check": name, "ok": ok, "detail": detail})
        print(json.dumps(self.checks[-1]), flush=True)
        return ok

    @property
    def passed(self) -> bool:
        return all(c["ok"] for c in self.checks) and bool(self.checks)

    async def run_session(self, ws) -> None:
        try:
            await self._script(ws)
        except (websockets.ConnectionClosed, asyncio.TimeoutError) as exc:
            self.record("connection", False, f"worker dropped early: {exc!r}")
        finally:
            self.done.set()

    async def _script(self, ws) -> None:
        raw = await asyncio.wait_for(ws.recv(), timeout=10)
        frame = json.loads(raw)
        if not self.record(
            "register-first",
            frame.get("type") == "register",
            f"first frame type {frame.get('type')!r}",
        ):
            return
        if not self.record("register-token", frame.get("token") == self.token):
            await ws.send(json.dumps({"type": "rejected", "reason": "bad token"}))
            return
        skills = frame.get("skills") or []
        schema_ok = bool(skills) and all(
            s.get("skill_id") and s.get("input_schema") and s.get("output_schema")
            for s in skills
        )
        if not self.record("register-skills", schema_ok, f"{len(skills)} skill(s)"):
            return
        await ws.send(
            json.dumps(
                {
                    "type": "registered",
                    "node_id": "conformance-node",
                    "heartbeat_interval_ms": self.heartbeat_interval_ms,
                }
            )
        )

        got_heartbeat = await self._await_frame(ws, "heartbeat", 2 * self.heartbeat_interval_ms / 1000)
        self.record("heartbeat", got_heartbeat is not None, "within 2 intervals")

        for i, skill in enumerate(skills):
            job_id = f"probe-{i}"
            await ws.send(
                json.dumps(
                    {
                        "type": "job",
                        "job_id": job_id,
                        "skill_id": skill["skill_id"],
                        "payload": probe_payload(skill["input_schema"]),
                    }
                )
            )
            result = await self._await_frame(ws, "result", 10, job_id=job_id)
            ok = result is not None and ("output" in result or "error" in result)
            self.record(f"probe-result:{skill['skill_id']}", ok, json.dumps(result)[:120])

        for i, entry in enumerate(self.golden):
            job_id = f"golden-{i}"
            await ws.send(
                json.dumps(
                    {
                        "type": "job",
                        "job_id": job_id,
                        "skill_id": entry["skill_id"],
                        "payload": entry["payload"],
                    }
                )
            )
            result = await self._await_frame(ws, "result", 10, job_id=job_id)
            if "expect_output" in entry:
                ok = result is not None and result.get("output") == entry["expect_output"]
            else:
                ok = result is not None and "error" in result
            self.record(
                f"golden:{entry['skill_id']}#{i}",
                ok,
                f"got {json.dumps(result)[:160]}",
            )

        unknown_id = "unknown-skill-probe"
        await ws.send(
            json.dumps(
                {"type": "job", "job_id": unknown_id, "skill_id": "no-such-skill-xyz", "payload": {}}
            )
        )
        result = await self._await_frame(ws, "result", 10, job_id=unknown_id)
        self.record(
            "unknown-skill-errors",
            result is not None and "error" in result,
            json.dumps(result)[:120] if result else "no result",
        )

    async def _await_frame(self, ws, wanted_type: str, timeout_s: float, job_id=None):
        """Next frame of wanted type (heartbeats in between are tolerated)."""
        deadline = asyncio.get_event_loop().time() + timeout_s
        while True:
            remaining = deadline - asyncio.get_event_loop().time()
            if remaining <= 0:
                return None
            try:
                frame = json.loads(await asyncio.wait_for(ws.recv(), timeout=remaining))
            except (asyncio.TimeoutError, websockets.ConnectionClosed):
                return None
            if frame.get("type") != wanted_type:
                continue
            if job_id is not None and frame.get("job_id") != job_id:
                continue
            return frame


async def run(args) -> int:
    golden = []
    if args.golden:
        golden = json.loads(open(args.golden, encoding="utf-8").read())
    session = Conformance(args.token, golden, heartbeat_interval_ms=args.heartbeat_ms)

    async def handler(ws):
        await session.run_session(ws)

    async with websockets.serve(handler, args.host, args.port):
        print(
            json.dumps({"listening": f"ws://{args.host}:{args.port}/broker"}),
            flush=True,
        )
        try:
            await asyncio.wait_for(session.done.wait(), timeout=args.timeout)
        except asyncio.TimeoutError:
            session.record("worker-connected", False, f"nothing connected in {args.timeout}s")
    verdict = {"conformance": "pass" if session.passed else "fail", "checks": len(session.checks)}
    print(json.dumps(verdict), flush=True)
    return 0 if session.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--token", required=True)
    parser.add_argument("--golden", default=None, help="JSON file with exact exchange expectations")
    parser.add_argument("--heartbeat-ms", type=int, default=500)
    parser.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for the worker")
    return asyncio.run(run(parser.parse_args(argv)))


if __name__ == "__main__":
    sys.exit(main())
