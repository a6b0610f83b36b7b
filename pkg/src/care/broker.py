"""Skill registry and job router between the server and external workers.

The broker is sans-io: worker registration, heartbeats, results and the
periodic sweep are plain method calls that return events. The transport
adapter (the /broker WebSocket endpoint) delivers WorkerSend frames to
worker sockets and hands JobOutcome events to the protocol hub, which
answers the originating client session.

Routing picks the healthy node advertising the skill with the lowest
inflight count, ties broken by least-recently-dispatched, then node id,
so the decision is total and reproducible.
"""

from __future__ import annotations

import hmac
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from care.models import Millis, new_id, now_ms

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL_MS = 5_000
HEARTBEAT_MISS_BUDGET = 2
DEFAULT_ASSIST_TIMEOUT_MS = 30_000


class BrokerRejected(Exception):
    """Registration refused (bad token or duplicate node id)."""


class JobState(str, Enum):
    QUEUED = "queued"
    DISPATCHED = "dispatched"
    DONE = "done"
    FAILED = "failed"
    TIMED_OUT = "timed_out"


TERMINAL_STATES = {JobState.DONE, JobState.FAILED, JobState.TIMED_OUT}


@dataclass(frozen=True, slots=True)
class Skill:
    skill_id: str
    input_schema: dict
    output_schema: dict
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.skill_id:
            raise ValueError("skill_id must be non-empty")
        if not self.input_schema or not self.output_schema:
            raise ValueError("skill schemas must be non-empty")


@dataclass(slots=True)
class WorkerNode:
    node_id: str
    skills: tuple[str, ...]
    registered_at: Millis
    last_heartbeat: Millis
    inflight: int = 0
    healthy: bool = True
    last_dispatch: int = 0  # dispatch counter value, 0 = never


@dataclass(slots=True)
class AssistJob:
    job_id: str
    skill_id: str
    payload: dict
    origin_session: str
    request_id: str
    submitted_at: Millis
    context: dict = field(default_factory=dict)
    state: JobState = JobState.QUEUED
    assigned_node: str | None = None


@dataclass(frozen=True, slots=True)
class WorkerSend:
    node_id: str
    frame: dict


@dataclass(frozen=True, slots=True)
class JobOutcome:
    job: AssistJob
    kind: str  # done | failed | timed_out | no-such-skill | invalid-payload
    output: dict | None = None
    error: str | None = None


class Broker:
    def __init__(
        self,
        token: str,
        *,
        clock: Callable[[], Millis] = now_ms,
        id_factory: Callable[[], str] = new_id,
        heartbeat_interval_ms: int = HEARTBEAT_INTERVAL_MS,
        miss_budget: int = HEARTBEAT_MISS_BUDGET,
        assist_timeout_ms: int = DEFAULT_ASSIST_TIMEOUT_MS,
    ):
        if not token:
            raise ValueError("broker token must be configured")
        self._token = token
        self._clock = clock
        self._new_id = id_factory
        self.heartbeat_interval_ms = heartbeat_interval_ms
        self.miss_budget = miss_budget
        self.assist_timeout_ms = assist_timeout_ms
        self.nodes: dict[str, WorkerNode] = {}
        self.skills: dict[str, Skill] = {}
        self.jobs: dict[str, AssistJob] = {}
        self._dispatch_counter = 0

    # -------------------------------------------------------- worker side

    def register(
        self, token: str, skills: list[dict], node_id: str | None = None
    ) -> tuple[str, list[WorkerSend]]:
        """Admit a worker node; its skills become routable immediately.

        The token comparison is constant-time. A client-proposed node id
        that is already taken is rejected rather than replaced.
        """
        if not hmac.compare_digest(token.encode(), self._token.encode()):
            raise BrokerRejected("bad token")
        if not skills:
            raise BrokerRejected("a node must serve at least one skill")
        parsed = [
            Skill(
                skill_id=s["skill_id"],
                input_schema=s["input_schema"],
                output_schema=s["output_schema"],
                config=s.get("config", {}),
            )
            for s in skills
        ]
        nid = node_id or self._new_id()
        if nid in self.nodes:
            raise BrokerRejected(f"duplicate node_id {nid}")
        now = self._clock()
        self.nodes[nid] = WorkerNode(
            node_id=nid,
            skills=tuple(s.skill_id for s in parsed),
            registered_at=now,
            last_heartbeat=now,
        )
        for skill in parsed:
            self.skills.setdefault(skill.skill_id, skill)
        return nid, [
            WorkerSend(
                nid,
                {
                    "type": "registered",
                    "node_id": nid,
                    "heartbeat_interval_ms": self.heartbeat_interval_ms,
                },
            )
        ]

    def heartbeat(self, node_id: str) -> None:
        node = self.nodes.get(node_id)
        if node is None:
            return
        node.last_heartbeat = self._clock()
        node.healthy = True

    def handle_result(self, node_id: str, frame: dict) -> list[JobOutcome | WorkerSend]:
        """A worker finished (or failed) a job; late results are dropped."""
        job = self.jobs.get(frame.get("job_id", ""))
        if job is None or job.state is not JobState.DISPATCHED or job.assigned_node != node_id:
            log.info("dropping stale result from %s for job %s", node_id, frame.get("job_id"))
            return []
        self._release_inflight(job)
        if "error" in frame:
            job.state = JobState.FAILED
            return [JobOutcome(job, "failed", error=str(frame["error"]))]
        job.state = JobState.DONE
        return [JobOutcome(job, "done", output=frame.get("output") or {})]

    def disconnect(self, node_id: str) -> list[JobOutcome | WorkerSend]:
        """Remove a node whose connection dropped; reroute its jobs."""
        node = self.nodes.pop(node_id, None)
        if node is None:
            return []
        return self._reroute_jobs_of(node_id)

    # -------------------------------------------------------- server side

    def submit(
        self,
        skill_id: str,
        payload: dict,
        origin_session: str,
        request_id: str,
        context: dict | None = None,
    ) -> tuple[AssistJob, list[JobOutcome | WorkerSend]]:
        job = AssistJob(
            job_id=self._new_id(),
            skill_id=skill_id,
            payload=payload,
            origin_session=origin_session,
            request_id=request_id,
            submitted_at=self._clock(),
            context=context or {},
        )
        self.jobs[job.job_id] = job
        skill = self.skills.get(skill_id)
        if skill is not None:
            missing = [k for k in skill.input_schema if k not in payload]
            if missing:
                job.state = JobState.FAILED
                return job, [
                    JobOutcome(job, "invalid-payload", error=f"missing inputs: {missing}")
                ]
        return job, self._route(job)

    def _route(self, job: AssistJob) -> list[JobOutcome | WorkerSend]:
        candidates = [
            n for n in self.nodes.values() if n.healthy and job.skill_id in n.skills
        ]
        if not candidates:
            job.state = JobState.FAILED
            return [JobOutcome(job, "no-such-skill", error=f"no node serves {job.skill_id}")]
        node = min(candidates, key=lambda n: (n.inflight, n.last_dispatch, n.node_id))
        self._dispatch_counter += 1
        node.last_dispatch = self._dispatch_counter
        node.inflight += 1
        job.state = JobState.DISPATCHED
        job.assigned_node = node.node_id
        return [
            WorkerSend(
                node.node_id,
                {
                    "type": "job",
                    "job_id": job.job_id,
                    "skill_id": job.skill_id,
                    "payload": job.payload,
                },
            )
        ]

    def sweep(self, now: Millis | None = None) -> list[JobOutcome | WorkerSend]:
        """Heartbeat liveness and job timeouts; call periodically.

        A node missing `miss_budget` heartbeat intervals turns unhealthy
        and its outstanding jobs are rerouted (or failed when no other
        node serves the skill). Jobs older than the assistance timeout
        reach timed_out exactly once.
        """
        now = now if now is not None else self._clock()
        events: list[JobOutcome | WorkerSend] = []
        deadline = self.miss_budget * self.heartbeat_interval_ms
        for node in list(self.nodes.values()):
            if node.healthy and now - node.last_heartbeat >= deadline:
                node.healthy = False
                events.extend(self._reroute_jobs_of(node.node_id))
        for job in list(self.jobs.values()):
            if job.state in TERMINAL_STATES:
                continue
            if now - job.submitted_at >= self.assist_timeout_ms:
                self._release_inflight(job)
                job.state = JobState.TIMED_OUT
                events.append(JobOutcome(job, "timed_out", error="assistance timed out"))
        return events

    def _reroute_jobs_of(self, node_id: str) -> list[JobOutcome | WorkerSend]:
        events: list[JobOutcome | WorkerSend] = []
        for job in self.jobs.values():
            if job.assigned_node == node_id and job.state is JobState.DISPATCHED:
                self._release_inflight(job)
                job.state = JobState.QUEUED
                job.assigned_node = None
                events.extend(self._route(job))
        return events

    def _release_inflight(self, job: AssistJob) -> None:
        if job.assigned_node is not None and job.state is JobState.DISPATCHED:
            node = self.nodes.get(job.assigned_node)
            if node is not None and node.inflight > 0:
                node.inflight -= 1

    # ----------------------------------------------------------- queries

    def registry(self) -> dict:
        return {
            "nodes": [
                {
                    "node_id": n.node_id,
                    "skills": list(n.skills),
                    "inflight": n.inflight,
                    "healthy": n.healthy,
                    "registered_at": n.registered_at,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
            ],
            "skills": sorted(self.skills),
            "jobs": {
                state.value: sum(1 for j in self.jobs.values() if j.state is state)
                for state in JobState
            },
        }
