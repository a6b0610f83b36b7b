"""Worker runtime: connect, register, heartbeat, work jobs, reconnect.

The broker's inflight accounting is the source of truth for load; this
worker simply executes jobs in arrival order (sequentially by default,
configurable) and answers every job exactly once, with `result` carrying
either `output` or `error`.
"""

from __future__ import annotations

import asyncio
import importlib
import json
import logging
from dataclasses import dataclass, field

import websockets

from care_worker.skills import SKILL_SPECS, SkillError, execute

log = logging.getLogger("care_worker")

MAX_BACKOFF_S = 5.0


class FatalWorkerError(Exception):
    """Unrecoverable (e.g. bad token): exit instead of reconnecting."""


@dataclass
class WorkerConfig:
    broker_url: str
    token: str
    skills: list[str] = field(default_factory=lambda: list(SKILL_SPECS))
    node_id: str | None = None
    parallelism: int = 1
    model_hook: object | None = None  # callable or "module:attr"

    def __post_init__(self) -> None:
        if not self.token:
            raise FatalWorkerError("a broker token is required")
        unknown = [s for s in self.skills if s not in SKILL_SPECS]
        if unknown:
            raise FatalWorkerError(f"unknown skills: {unknown}")
        if isinstance(self.model_hook, str):
            module_name, _, attr = self.model_hook.partition(":")
            self.model_hook = getattr(importlib.import_module(module_name), attr)


def register_frame(config: WorkerConfig) -> dict:
    frame = {
        "type": "register",
        "token": config.token,
        "skills": [SKILL_SPECS[s] for s in config.skills],
    }
    if config.node_id:
        frame["node_id"] = config.node_id
    return frame


async def run_worker(config: WorkerConfig, *, stop: asyncio.Event | None = None) -> None:
    """Serve until `stop` is set. Reconnects with capped backoff on drops."""
    stop = stop or asyncio.Event()
    backoff = 0.5
    while not stop.is_set():
        try:
            await _serve_once(config, stop)
            backoff = 0.5
        except FatalWorkerError:
            raise
        except (OSError, websockets.WebSocketException, asyncio.TimeoutError) as exc:
            log.warning("connection lost (%s); reconnecting in %.1fs", exc, backoff)
        if stop.is_set():
            return
        try:
            await asyncio.wait_for(stop.wait(), timeout=backoff)
        except asyncio.TimeoutError:
            pass
        backoff = min(backoff * 2, MAX_BACKOFF_S)


async def _serve_once(config: WorkerConfig, stop: asyncio.Event) -> None:
    async with websockets.connect(config.broker_url) as ws:
        await ws.send(json.dumps(register_frame(config)))
        reply = json.loads(await ws.recv())
        if reply.get("type") == "rejected":
            raise FatalWorkerError(f"broker rejected registration: {reply.get('reason')}")
        if reply.get("type") != "registered":
            raise FatalWorkerError(f"unexpected registration reply: {reply}")
        node_id = reply["node_id"]
        interval_s = reply.get("heartbeat_interval_ms", 5000) / 1000
        log.info("registered as %s, heartbeat every %.1fs", node_id, interval_s)

        semaphore = asyncio.Semaphore(max(1, config.parallelism))
        heartbeat = asyncio.create_task(_heartbeat_loop(ws, interval_s))
        stopper = asyncio.create_task(stop.wait())
        tasks: set[asyncio.Task] = set()
        try:
            while not stop.is_set():
                receiver = asyncio.create_task(ws.recv())
                done, _ = await asyncio.wait(
                    {receiver, stopper}, return_when=asyncio.FIRST_COMPLETED
                )
                if stopper in done:
                    receiver.cancel()
                    return
                frame = json.loads(receiver.result())
                if frame.get("type") != "job":
                    continue
                task = asyncio.create_task(_work(ws, frame, config, semaphore))
                tasks.add(task)
                task.add_done_callback(tasks.discard)
        finally:
            heartbeat.cancel()
            stopper.cancel()
            for task in tasks:
                task.cancel()


async def _heartbeat_loop(ws, interval_s: float) -> None:
    while True:
        await ws.send(json.dumps({"type": "heartbeat"}))
        await asyncio.sleep(interval_s)


async def _work(ws, frame: dict, config: WorkerConfig, semaphore: asyncio.Semaphore) -> None:
    async with semaphore:
        result: dict = {"type": "result", "job_id": frame.get("job_id")}
        try:
            output = execute(frame.get("skill_id", ""), frame.get("payload") or {},
                             model_hook=config.model_hook)
            result["output"] = output
        except SkillError as exc:
            result["error"] = str(exc)
        except Exception as exc:  # a crashing hook must not kill the worker
            log.exception("skill execution failed")
            result["error"] = f"internal: {exc}"
        try:
            await ws.send(json.dumps(result, ensure_ascii=False))
        except websockets.WebSocketException:
            log.warning("could not deliver result for job %s", frame.get("job_id"))
