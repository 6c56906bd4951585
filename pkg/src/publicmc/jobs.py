"""Job intake, script parsing and the job lifecycle state machine.

Scripts are plain text; lines starting ``#JOB `` carry ``key=value``
directives, everything else is ignored payload.  Jobs move through
Queued / Running / Completed / Failed / Cancelled with a single
requeue allowed after a node failure.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field

from .workload import APPS, WorkloadSpec, Estimate

MAX_WALLTIME_S = 86400
DEFAULT_MEM_MB_PER_CPU = 256

DIRECTIVE_PREFIX = "#JOB "

_COMMON_KEYS = {"cpus", "walltime_s", "mem_mb_per_cpu", "app"}
_APP_KEYS = {
    "pi": {"samples", "seed"},
    "slab": {"samples", "seed", "sigma_t", "sigma_a", "thickness"},
}


class JobState(str, enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"


class FailCause(str, enum.Enum):
    WALLTIME_EXCEEDED = "walltime_exceeded"
    NODE_FAILURE = "node_failure"
    WORKLOAD_ERROR = "workload_error"


TERMINAL_STATES = frozenset({JobState.COMPLETED, JobState.FAILED,
                             JobState.CANCELLED})

_LEGAL_TRANSITIONS = frozenset({
    (JobState.QUEUED, JobState.RUNNING),
    (JobState.QUEUED, JobState.CANCELLED),
    (JobState.RUNNING, JobState.COMPLETED),
    (JobState.RUNNING, JobState.FAILED),
    (JobState.RUNNING, JobState.CANCELLED),
    (JobState.FAILED, JobState.QUEUED),  # requeue after node failure only
})


class JobError(Exception):
    pass


class ScriptParseError(JobError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line
        self.message = message


class RequestTooLarge(JobError):
    """The job can never run on this cluster's total capacity."""


class UnknownJob(JobError):
    pass


class NotOwner(JobError):
    pass


class IllegalTransition(JobError):
    pass


@dataclass(frozen=True)
class ResourceRequest:
    cpus_total: int
    walltime_s: int
    mem_mb_per_cpu: int = DEFAULT_MEM_MB_PER_CPU


@dataclass(frozen=True)
class JobSpec:
    owner: str
    request: ResourceRequest
    workload: WorkloadSpec
    submitted_at: float
    script_text: str


@dataclass
class Job:
    job_id: int
    spec: JobSpec
    state: JobState = JobState.QUEUED
    state_history: list[tuple[JobState, float]] = field(default_factory=list)
    allocation: object | None = None  # scheduler.Allocation while Running
    result: Estimate | None = None
    requeue_count: int = 0
    cause: FailCause | None = None

    def summary(self) -> dict:
        return {
            "job_id": self.job_id,
            "owner": self.spec.owner,
            "state": self.state.value,
            "cause": self.cause.value if self.cause else None,
            "cpus": self.spec.request.cpus_total,
            "walltime_s": self.spec.request.walltime_s,
            "app": self.spec.workload.app,
            "submitted_at": self.spec.submitted_at,
            "requeue_count": self.requeue_count,
        }


def _parse_int(key: str, value: str, line: int, *, lo: int = 1,
               hi: int | None = None) -> int:
    try:
        n = int(value)
    except ValueError:
        raise ScriptParseError(f"{key} must be an integer, got {value!r}",
                               line) from None
    if n < lo or (hi is not None and n > hi):
        bound = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
        raise ScriptParseError(f"{key} must be {bound}, got {n}", line)
    return n


def _parse_float(key: str, value: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ScriptParseError(f"{key} must be a number, got {value!r}",
                               line) from None


def parse_job_script(text: str) -> tuple[ResourceRequest, WorkloadSpec]:
    """Parse the ``#JOB key=value`` directives of a job script."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.startswith(DIRECTIVE_PREFIX):
            continue
        body = raw[len(DIRECTIVE_PREFIX):].strip()
        if "=" not in body:
            raise ScriptParseError(f"expected key=value, got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key in values:
            raise ScriptParseError(f"duplicate key {key!r}", lineno)
        values[key] = value
        lines[key] = lineno

    app = values.get("app")
    if app is None:
        raise ScriptParseError("missing required key 'app'")
    if app not in APPS:
        raise ScriptParseError(f"app must be one of {sorted(APPS)}, got "
                               f"{app!r}", lines["app"])
    allowed = _COMMON_KEYS | _APP_KEYS[app]
    for key in values:
        if key not in allowed:
            raise ScriptParseError(f"unknown key {key!r}", lines[key])
    for key in ("cpus", "walltime_s", *sorted(_APP_KEYS[app])):
        if key not in values:
            raise ScriptParseError(f"missing required key {key!r}")

    cpus = _parse_int("cpus", values["cpus"], lines["cpus"])
    walltime = _parse_int("walltime_s", values["walltime_s"],
                          lines["walltime_s"], hi=MAX_WALLTIME_S)
    mem = DEFAULT_MEM_MB_PER_CPU
    if "mem_mb_per_cpu" in values:
        mem = _parse_int("mem_mb_per_cpu", values["mem_mb_per_cpu"],
                         lines["mem_mb_per_cpu"])
    samples = _parse_int("samples", values["samples"], lines["samples"])
    seed = _parse_int("seed", values["seed"], lines["seed"], lo=0)
    if seed >= 1 << 64:
        raise ScriptParseError("seed must fit in 64 bits", lines["seed"])
    if samples < cpus:
        raise ScriptParseError(
            f"samples ({samples}) must be >= cpus ({cpus}); one task runs "
            "per cpu", lines["samples"])

    if app == "pi":
        workload = WorkloadSpec(app="pi", total_samples=samples,
                                master_seed=seed)
    else:
        workload = WorkloadSpec(
            app="slab", total_samples=samples, master_seed=seed,
            sigma_t=_parse_float("sigma_t", values["sigma_t"],
                                 lines["sigma_t"]),
            sigma_a=_parse_float("sigma_a", values["sigma_a"],
                                 lines["sigma_a"]),
            thickness=_parse_float("thickness", values["thickness"],
                                   lines["thickness"]),
        )
    try:
        workload.validate()
    except ValueError as exc:
        raise ScriptParseError(str(exc)) from None
    return ResourceRequest(cpus_total=cpus, walltime_s=walltime,
                           mem_mb_per_cpu=mem), workload


def render_job_script(cpus: int, walltime_s: int, workload: WorkloadSpec,
                      mem_mb_per_cpu: int | None = None) -> str:
    """Inverse of parse_job_script; handy for clients and tests."""
    lines = [f"#JOB cpus={cpus}", f"#JOB walltime_s={walltime_s}",
             f"#JOB app={workload.app}",
             f"#JOB samples={workload.total_samples}",
             f"#JOB seed={workload.master_seed}"]
    if mem_mb_per_cpu is not None:
        lines.append(f"#JOB mem_mb_per_cpu={mem_mb_per_cpu}")
    if workload.app == "slab":
        lines.append(f"#JOB sigma_t={workload.sigma_t!r}")
        lines.append(f"#JOB sigma_a={workload.sigma_a!r}")
        lines.append(f"#JOB thickness={workload.thickness!r}")
    return "\n".join(lines) + "\n"


class JobRegistry:
    """All jobs, keyed by a monotonically increasing id.

    Mutations are expected to arrive from the cluster's single event
    stream; the lock only protects concurrent readers.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._jobs: dict[int, Job] = {}
        self._next_id = 1

    @property
    def next_id(self) -> int:
        with self._lock:
            return self._next_id

    def install(self, job: Job) -> None:
        """Store a job built here or rebuilt from the event log."""
        with self._lock:
            if job.job_id in self._jobs:
                raise JobError(f"job id {job.job_id} already present")
            self._jobs[job.job_id] = job
            self._next_id = max(self._next_id, job.job_id + 1)

    def get(self, job_id: int) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(f"no job {job_id}")
        return job

    def list_jobs(self, owner: str | None = None,
                  state: JobState | None = None) -> list[Job]:
        with self._lock:
            jobs = sorted(self._jobs.values(), key=lambda j: j.job_id)
        if owner is not None:
            jobs = [j for j in jobs if j.spec.owner == owner]
        if state is not None:
            jobs = [j for j in jobs if j.state == state]
        return jobs

    def queued_jobs(self) -> list[Job]:
        return self.list_jobs(state=JobState.QUEUED)

    def apply_transition(self, job_id: int, new_state: JobState,
                         timestamp: float,
                         cause: FailCause | None = None) -> Job:
        """Apply one legal state-machine edge; raises IllegalTransition."""
        job = self.get(job_id)
        edge = (job.state, new_state)
        if edge not in _LEGAL_TRANSITIONS:
            raise IllegalTransition(
                f"job {job_id}: {job.state.value} -> {new_state.value}")
        if edge == (JobState.FAILED, JobState.QUEUED):
            if job.cause != FailCause.NODE_FAILURE:
                raise IllegalTransition(
                    f"job {job_id}: only node-failure jobs may requeue")
            if job.requeue_count >= 1:
                raise IllegalTransition(
                    f"job {job_id}: requeue allowed at most once")
            job.requeue_count += 1
            job.cause = None
            job.result = None
        if new_state == JobState.FAILED:
            job.cause = cause
        if new_state != JobState.RUNNING:
            job.allocation = None
        job.state = new_state
        job.state_history.append((new_state, timestamp))
        return job

    def should_requeue(self, job: Job) -> bool:
        """Requeue-once policy after a node failure."""
        return (job.state == JobState.FAILED
                and job.cause == FailCause.NODE_FAILURE
                and job.requeue_count == 0)
