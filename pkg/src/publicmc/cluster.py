"""The single-writer cluster core.

Every state change is an event: validated, appended to the log (write
ahead), then applied to the in-memory stores through one code path shared
with recovery replay.  Request handlers, the periodic tick and task
completions all funnel through one re-entrant lock, so state behaves as
if owned by a single logical writer while task execution itself runs
genuinely in parallel.

Live side effects (launching tasks, writing workspace files) happen after
the owning event is durable and are re-derived during recovery: jobs that
were running restart their tasks from scratch, which is safe because
tallies are pure functions of the workload spec.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path

from . import auth as auth_mod
from . import gateway as gw
from . import jobs as jobs_mod
from . import nodes as nodes_mod
from . import scheduler as sched
from . import workload as wl
from .config import ServiceConfig
from .events import EventLog, EventRecord
from .jobs import FailCause, JobState

EV_USER_REGISTERED = "user_registered"
EV_NODE_REGISTERED = "node_registered"
EV_NODE_UP = "node_up"
EV_NODE_DOWN = "node_down"
EV_JOB_SUBMITTED = "job_submitted"
EV_TRANSITION = "transition"
EV_ALLOCATION_APPLIED = "allocation_applied"
EV_VERDICT_LOGGED = "verdict_logged"
EV_WHITELIST_RELOADED = "whitelist_reloaded"


class SystemClock:
    def now(self) -> float:
        return time.time()


class ManualClock:
    """Test clock: time moves only when told to."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> float:
        self._now += float(dt)
        return self._now

    def set(self, t: float) -> None:
        self._now = float(t)


class Cluster:
    """Owns all mutable server state; every mutation flows through events."""

    def __init__(self, cfg: ServiceConfig, *, clock=None, executor=None):
        cfg.validate()
        self.cfg = cfg
        self.clock = clock or SystemClock()
        self.data_dir = Path(cfg.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)

        self._lock = threading.RLock()
        self.log = EventLog(self.data_dir / "events.log")
        self.auth = auth_mod.AccessControl(cfg.session_ttl_s)
        self.registry = jobs_mod.JobRegistry()
        self.pool = nodes_mod.NodePool(cfg.heartbeat_interval_s)
        self.audit: list[dict] = []
        self._tallies: dict[int, dict[int, wl.TaskTally]] = {}
        self._faulted: set[str] = set()
        self._reservation: sched.Reservation | None = None
        self._whitelist_revision = 0
        self._whitelist: gw.Whitelist | None = None

        self.executor = executor if executor is not None else \
            nodes_mod.ThreadedExecutor(self._on_task_done)

        self.dispatcher = gw.Dispatcher(
            self.data_dir / "workspaces",
            submit_job=self.submit_job,
            list_jobs=lambda: [j.summary() for j in self.registry.list_jobs()],
            cancel_job=self.cancel_job,
            list_nodes=lambda: self.pool.snapshot(),
            username_of=self.auth.get_username,
        )

        with self._lock:
            self._replay()
            self._load_whitelist()
            self._register_config_nodes()
            self._recover_running_jobs()
            self._regenerate_workspace_files()
            self._schedule()

    # ------------------------------------------------------------------
    # event plumbing

    def _emit(self, kind: str, payload: dict) -> EventRecord:
        record = EventRecord(sequence=self.log.next_sequence,
                             occurred_at=self.clock.now(), kind=kind,
                             payload=payload)
        self.log.append(record)  # durable before any response
        self._apply(record)
        return record

    def _apply(self, record: EventRecord) -> None:
        kind, p = record.kind, record.payload
        if kind == EV_USER_REGISTERED:
            self.auth.restore(auth_mod.UserAccount(
                user_id=p["user_id"], username=p["username"],
                password_digest=p["password_digest"],
                created_at=p["created_at"]))
        elif kind == EV_NODE_REGISTERED:
            self.pool.register(nodes_mod.NodeDescriptor(
                p["node_id"], p["cpus_capacity"], p["mem_mb_capacity"]),
                now=record.occurred_at)
        elif kind == EV_NODE_UP:
            self.pool.mark_up(p["node_id"])
        elif kind == EV_NODE_DOWN:
            self.pool.mark_down(p["node_id"])
        elif kind == EV_JOB_SUBMITTED:
            request, workload = jobs_mod.parse_job_script(p["script_text"])
            job = jobs_mod.Job(
                job_id=p["job_id"],
                spec=jobs_mod.JobSpec(owner=p["owner"], request=request,
                                      workload=workload,
                                      submitted_at=p["submitted_at"],
                                      script_text=p["script_text"]),
                state=JobState.QUEUED,
                state_history=[(JobState.QUEUED, p["submitted_at"])],
            )
            self.registry.install(job)
        elif kind == EV_TRANSITION:
            job = self.registry.get(p["job_id"])
            new_state = JobState(p["state"])
            if job.state == JobState.RUNNING and new_state != JobState.RUNNING:
                self.pool.release_job(job.job_id)
            cause = FailCause(p["cause"]) if p.get("cause") else None
            self.registry.apply_transition(job.job_id, new_state, p["at"],
                                           cause)
            if new_state == JobState.COMPLETED:
                job.result = wl.estimate_from_totals(
                    job.spec.workload.app, p["result"]["n"],
                    p["result"]["counters"])
        elif kind == EV_ALLOCATION_APPLIED:
            job = self.registry.get(p["job_id"])
            placements = tuple(sched.Placement(node_id, cpus)
                               for node_id, cpus in p["placements"])
            # a job holds at most one allocation; recovery relaunches replace
            self.pool.release_job(job.job_id)
            self.pool.apply_allocation(job.job_id, placements,
                                       job.spec.request.mem_mb_per_cpu,
                                       p["deadline"])
            job.allocation = sched.Allocation(job.job_id, placements,
                                              p["start"], p["deadline"])
        elif kind == EV_VERDICT_LOGGED:
            self.audit.append(dict(p))
        elif kind == EV_WHITELIST_RELOADED:
            self._whitelist_revision = p["revision"]
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def _replay(self) -> None:
        for record in self.log.records():
            self._apply(record)

    # ------------------------------------------------------------------
    # startup helpers

    def _whitelist_path(self) -> Path:
        return Path(self.cfg.whitelist_path) if self.cfg.whitelist_path \
            else self.data_dir / "whitelist.txt"

    def _load_whitelist(self) -> None:
        path = self._whitelist_path()
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(gw.DEFAULT_WHITELIST_TEXT, encoding="utf-8")
        if self._whitelist_revision == 0:
            self._whitelist_revision = 1
        self._whitelist = gw.Whitelist.load(
            path, revision=self._whitelist_revision)

    def _register_config_nodes(self) -> None:
        for desc in self.cfg.nodes:
            if not self.pool.has_node(desc.node_id):
                self._emit(EV_NODE_REGISTERED, {
                    "node_id": desc.node_id,
                    "cpus_capacity": desc.cpus_capacity,
                    "mem_mb_capacity": desc.mem_mb_capacity})

    def _recover_running_jobs(self) -> None:
        """Relaunch tasks of jobs that were running at the crash point.

        The allocation keeps its placements but restarts its walltime
        window now; determinism guarantees bit-identical final results.
        """
        now = self.clock.now()
        for job in self.registry.list_jobs(state=JobState.RUNNING):
            placements = job.allocation.placements
            nodes_up = all(self.pool.is_up(p.node_id) for p in placements)
            if not nodes_up:
                self._fail_job(job, FailCause.NODE_FAILURE)
                continue
            self._emit(EV_ALLOCATION_APPLIED, {
                "job_id": job.job_id,
                "placements": [[p.node_id, p.cpus] for p in placements],
                "start": now,
                "deadline": now + job.spec.request.walltime_s})
            self._launch_tasks(job)

    def _regenerate_workspace_files(self) -> None:
        for job in self.registry.list_jobs():
            self._write_script_file(job)
            if job.state == JobState.COMPLETED and job.result is not None:
                self._write_output_file(job)

    # ------------------------------------------------------------------
    # access control surface

    def register_user(self, username: str, password: str) -> auth_mod.UserAccount:
        # digest computed outside the core lock; scrypt is deliberately slow
        account = self.auth.prepare_registration(username, password,
                                                 now=self.clock.now())
        with self._lock:
            if self.auth.get_account(username) is not None:
                raise auth_mod.DuplicateUsername(
                    f"username {username!r} is taken")
            self._emit(EV_USER_REGISTERED, {
                "user_id": account.user_id, "username": account.username,
                "password_digest": account.password_digest,
                "created_at": account.created_at})
        return account

    def login(self, username: str, password: str) -> auth_mod.Session:
        return self.auth.login(username, password, now=self.clock.now())

    def validate_session(self, token: str) -> str:
        return self.auth.validate_session(token, now=self.clock.now())

    def logout(self, token: str) -> None:
        self.auth.logout(token)

    # ------------------------------------------------------------------
    # command gateway surface

    def submit_command(self, user_id: str, raw_line: str):
        """Filter a command line; dispatch it if allowed.

        Returns (request, verdict, receipt-or-None).  A rejection is a
        successful evaluation, not an error.
        """
        with self._lock:
            request = gw.CommandRequest(
                request_id=f"req-{self.log.next_sequence}",
                user_id=user_id, raw_line=raw_line,
                submitted_at=self.clock.now())
            verdict = gw.filter_command(request, self._whitelist)
            self._emit(EV_VERDICT_LOGGED, {
                "request_id": request.request_id, "user_id": user_id,
                "raw_line": raw_line, "allowed": verdict.allowed,
                "command_class": verdict.command_class,
                "reason": verdict.reason, "detail": verdict.detail,
                "whitelist_revision": self._whitelist.revision,
                "at": request.submitted_at})
            receipt = None
            if verdict.allowed:
                try:
                    receipt = self.dispatcher.dispatch(request, verdict)
                except gw.WorkspaceEscape as exc:
                    receipt = gw.DispatchReceipt(
                        request.request_id, "denied",
                        error=f"WorkspaceEscape: {exc}")
                except (jobs_mod.JobError, wl.WorkloadError) as exc:
                    receipt = gw.DispatchReceipt(
                        request.request_id, "error",
                        error=f"{type(exc).__name__}: {exc}")
            return request, verdict, receipt

    def reload_whitelist(self) -> int:
        """Admin signal: reload the whitelist file, bumping the revision.
        In-flight verdicts keep the revision they started with."""
        with self._lock:
            revision = self._whitelist_revision + 1
            self._whitelist = gw.Whitelist.load(self._whitelist_path(),
                                                revision=revision)
            self._emit(EV_WHITELIST_RELOADED, {
                "revision": revision, "path": self._whitelist.source_path})
            return revision

    @property
    def whitelist(self) -> gw.Whitelist:
        return self._whitelist

    # ------------------------------------------------------------------
    # batch queue surface

    def submit_job(self, user_id: str, script_text: str) -> int:
        with self._lock:
            request, _ = jobs_mod.parse_job_script(script_text)
            capacity = self.pool.schedulable_cpus(request.mem_mb_per_cpu)
            if request.cpus_total > capacity:
                raise jobs_mod.RequestTooLarge(
                    f"job needs {request.cpus_total} cpus but this cluster "
                    f"can ever provide {capacity}")
            job_id = self.registry.next_id
            now = self.clock.now()
            self._emit(EV_JOB_SUBMITTED, {
                "job_id": job_id, "owner": user_id,
                "script_text": script_text, "submitted_at": now})
            self._write_script_file(self.registry.get(job_id))
            self._schedule()
            return job_id

    def cancel_job(self, user_id: str, job_id: int) -> jobs_mod.Job:
        with self._lock:
            job = self.registry.get(job_id)
            if job.spec.owner != user_id:
                raise jobs_mod.NotOwner(
                    f"job {job_id} is not owned by this user")
            if job.state in jobs_mod.TERMINAL_STATES:
                return job  # idempotent no-op
            if job.state == JobState.RUNNING:
                self.executor.stop_job(job_id)
                self._tallies.pop(job_id, None)
            self._transition(job, JobState.CANCELLED)
            self._schedule()
            return job

    def get_job(self, job_id: int) -> jobs_mod.Job:
        return self.registry.get(job_id)

    def list_jobs(self, owner: str | None = None,
                  state: JobState | None = None) -> list[jobs_mod.Job]:
        return self.registry.list_jobs(owner=owner, state=state)

    # ------------------------------------------------------------------
    # time-driven behavior

    def tick(self) -> None:
        """Heartbeats, failure detection, walltime, completions, scheduling."""
        with self._lock:
            now = self.clock.now()
            for node_id in self.pool.node_ids():
                if node_id in self._faulted:
                    continue
                tasks = self.executor.running_tasks(node_id) \
                    if hasattr(self.executor, "running_tasks") else frozenset()
                rejoining = self.pool.heartbeat(node_id, now, tasks)
                if rejoining:
                    self._emit(EV_NODE_UP, {"node_id": node_id})
            for node_id in self.pool.overdue_nodes(now):
                self._node_failure(node_id)
            for job in self.registry.list_jobs(state=JobState.RUNNING):
                if job.allocation and now >= job.allocation.deadline:
                    self.executor.stop_job(job.job_id)
                    self._tallies.pop(job.job_id, None)
                    self._fail_job(job, FailCause.WALLTIME_EXCEEDED)
            if hasattr(self.executor, "poll"):
                for handle, tally in self.executor.poll(now):
                    self._handle_completion(handle, tally)
            self._schedule()

    def kill_node(self, node_id: str) -> None:
        """Fault injection: the node stops heartbeating and its tasks die."""
        with self._lock:
            self._faulted.add(node_id)
            self.executor.stop_node(node_id)

    def revive_node(self, node_id: str) -> None:
        with self._lock:
            self._faulted.discard(node_id)

    def _node_failure(self, node_id: str) -> None:
        self._emit(EV_NODE_DOWN, {"node_id": node_id})
        victims = [self.registry.get(jid)
                   for jid in self.pool.jobs_on(node_id)]
        for job in victims:
            if job.state != JobState.RUNNING:
                continue
            self.executor.stop_job(job.job_id)
            self._tallies.pop(job.job_id, None)
            self._fail_job(job, FailCause.NODE_FAILURE)

    def _fail_job(self, job: jobs_mod.Job, cause: FailCause) -> None:
        self._transition(job, JobState.FAILED, cause)
        if self.registry.should_requeue(job):
            self._transition(job, JobState.QUEUED)

    def _transition(self, job: jobs_mod.Job, new_state: JobState,
                    cause: FailCause | None = None,
                    result: dict | None = None) -> None:
        payload = {"job_id": job.job_id, "state": new_state.value,
                   "at": self.clock.now()}
        if cause is not None:
            payload["cause"] = cause.value
        if result is not None:
            payload["result"] = result
        self._emit(EV_TRANSITION, payload)

    # ------------------------------------------------------------------
    # scheduling and execution

    def _sched_request(self, job: jobs_mod.Job) -> sched.JobRequest:
        r = job.spec.request
        return sched.JobRequest(job_id=job.job_id, cpus=r.cpus_total,
                                mem_mb_per_cpu=r.mem_mb_per_cpu,
                                walltime_s=r.walltime_s,
                                submitted_at=job.spec.submitted_at)

    def _schedule(self) -> None:
        now = self.clock.now()
        queued = [self._sched_request(j) for j in self.registry.queued_jobs()]
        plan = sched.plan_schedule(queued, self.pool.views(), now,
                                   w_wait=self.cfg.w_wait,
                                   w_size=self.cfg.w_size)
        self._reservation = plan.reservation
        for alloc in plan.allocations:
            job = self.registry.get(alloc.job_id)
            if not all(self.pool.is_up(p.node_id) for p in alloc.placements):
                # run the stated failure path even though the serialized
                # core cannot normally race a node down mid-plan
                self._emit(EV_ALLOCATION_APPLIED, {
                    "job_id": job.job_id,
                    "placements": [[p.node_id, p.cpus]
                                   for p in alloc.placements],
                    "start": alloc.start, "deadline": alloc.deadline})
                self._transition(job, JobState.RUNNING)
                self._fail_job(job, FailCause.NODE_FAILURE)
                continue
            self._emit(EV_ALLOCATION_APPLIED, {
                "job_id": job.job_id,
                "placements": [[p.node_id, p.cpus] for p in alloc.placements],
                "start": alloc.start, "deadline": alloc.deadline})
            self._transition(job, JobState.RUNNING)
            self._launch_tasks(job)

    def _launch_tasks(self, job: jobs_mod.Job) -> None:
        tasks = wl.split_workload(job.spec.workload,
                                  job.spec.request.cpus_total, job.job_id)
        node_per_task: list[str] = []
        for p in job.allocation.placements:
            node_per_task.extend([p.node_id] * p.cpus)
        self._tallies[job.job_id] = {}
        now = self.clock.now()
        for task, node_id in zip(tasks, node_per_task):
            handle = nodes_mod.TaskHandle(
                job_id=job.job_id, task_index=task.task_index,
                node_id=node_id, incarnation=job.requeue_count, spec=task)
            self.executor.launch(handle, now)

    def _on_task_done(self, handle: nodes_mod.TaskHandle,
                      tally: wl.TaskTally) -> None:
        """Completion entry point for the threaded executor."""
        with self._lock:
            self._handle_completion(handle, tally)
            self._schedule()

    def complete_task(self, job_id: int, task_index: int,
                      tally: wl.TaskTally) -> None:
        """Record a task completion by identity.

        Unknown jobs or out-of-range task indices raise UnknownTask;
        completions for jobs no longer running are discarded silently
        (cancellation wins).
        """
        with self._lock:
            try:
                job = self.registry.get(job_id)
            except jobs_mod.UnknownJob:
                raise nodes_mod.UnknownTask(
                    f"no task {task_index} of job {job_id}") from None
            if not 0 <= task_index < job.spec.request.cpus_total:
                raise nodes_mod.UnknownTask(
                    f"no task {task_index} of job {job_id}")
            node_id = ""
            if job.allocation is not None:
                node_per_task = []
                for p in job.allocation.placements:
                    node_per_task.extend([p.node_id] * p.cpus)
                node_id = node_per_task[task_index]
            handle = nodes_mod.TaskHandle(
                job_id=job_id, task_index=task_index, node_id=node_id,
                incarnation=job.requeue_count,
                spec=None)  # spec unused on the completion path
            self._handle_completion(handle, tally)
            self._schedule()

    def _handle_completion(self, handle: nodes_mod.TaskHandle,
                           tally: wl.TaskTally) -> None:
        job = self.registry.get(handle.job_id)
        if job.state != JobState.RUNNING:
            return  # cancellation or failure won; tally discarded
        if handle.incarnation != job.requeue_count:
            return  # stale completion from before a requeue
        if handle.node_id and self.pool.has_node(handle.node_id) and (
                handle.node_id in self._faulted
                or not self.pool.is_up(handle.node_id)):
            return  # the node died; the failure detector owns this job now
        tallies = self._tallies.setdefault(job.job_id, {})
        tallies[handle.task_index] = tally
        if len(tallies) == job.spec.request.cpus_total:
            ordered = [tallies[i] for i in range(len(tallies))]
            estimate = wl.merge_tallies(ordered)
            self._tallies.pop(job.job_id, None)
            self._transition(job, JobState.COMPLETED, result={
                "n": estimate.n, "counters": estimate.counters})
            self._write_output_file(job)

    # ------------------------------------------------------------------
    # views

    def queue_snapshot(self) -> dict:
        with self._lock:
            queued = [j.summary() for j in self.registry.queued_jobs()]
            reservation = None
            if self._reservation is not None:
                r = self._reservation
                reservation = {
                    "job_id": r.job_id,
                    "earliest_start": r.earliest_start,
                    "placements": [{"node_id": p.node_id, "cpus": p.cpus}
                                   for p in r.reserved_placements],
                }
            return {"queued": queued, "reservation": reservation}

    def metrics(self) -> dict:
        with self._lock:
            nodes = {}
            for snap in self.pool.snapshot():
                used = snap["cpus_capacity"] - snap["cpus_free"]
                nodes[snap["node_id"]] = {
                    "state": snap["state"],
                    "utilization": used / snap["cpus_capacity"],
                }
            jobs = self.registry.list_jobs()
            return {
                "nodes": nodes,
                "queue_length": sum(1 for j in jobs
                                    if j.state == JobState.QUEUED),
                "running": sum(1 for j in jobs
                               if j.state == JobState.RUNNING),
                "completed": sum(1 for j in jobs
                                 if j.state == JobState.COMPLETED),
                "failed": sum(1 for j in jobs
                              if j.state == JobState.FAILED),
                "cancelled": sum(1 for j in jobs
                                 if j.state == JobState.CANCELLED),
            }

    def job_detail(self, job: jobs_mod.Job) -> dict:
        detail = job.summary()
        detail["state_history"] = [[s.value, t] for s, t in job.state_history]
        detail["allocation"] = None
        if job.allocation is not None:
            detail["allocation"] = {
                "placements": [{"node_id": p.node_id, "cpus": p.cpus}
                               for p in job.allocation.placements],
                "start": job.allocation.start,
                "deadline": job.allocation.deadline,
            }
        detail["result"] = None
        if job.result is not None:
            est = job.result
            detail["result"] = {
                "mean": est.mean, "std_error": est.std_error, "n": est.n,
                "counters": est.counters,
                "per_bin": {k: {"fraction": f, "std_error": se}
                            for k, (f, se) in est.per_bin.items()},
            }
        return detail

    def snapshot_state(self) -> dict:
        """Canonical fold of the durable state, for replay-equivalence checks."""
        with self._lock:
            return {
                "accounts": [
                    {"user_id": a.user_id, "username": a.username,
                     "password_digest": a.password_digest,
                     "created_at": a.created_at}
                    for a in self.auth.accounts()],
                "jobs": [self.job_detail(j) for j in self.registry.list_jobs()],
                "nodes": self.pool.snapshot(),
                "audit": list(self.audit),
                "next_job_id": self.registry.next_id,
                "whitelist_revision": self._whitelist_revision,
            }

    # ------------------------------------------------------------------
    # workspace files

    def _workspace_of(self, job: jobs_mod.Job) -> Path | None:
        username = self.auth.get_username(job.spec.owner)
        if username is None:
            return None
        ws = self.data_dir / "workspaces" / username
        ws.mkdir(parents=True, exist_ok=True)
        return ws

    def _write_script_file(self, job: jobs_mod.Job) -> None:
        ws = self._workspace_of(job)
        if ws is not None:
            (ws / f"job-{job.job_id}.job").write_text(job.spec.script_text,
                                                      encoding="utf-8")

    def _write_output_file(self, job: jobs_mod.Job) -> None:
        ws = self._workspace_of(job)
        if ws is not None and job.result is not None:
            (ws / f"job-{job.job_id}.out").write_text(
                wl.render_result_block(job.result), encoding="utf-8")

    def job_output(self, job: jobs_mod.Job) -> str | None:
        if job.result is None:
            return None
        return wl.render_result_block(job.result)

    # ------------------------------------------------------------------

    def wait_all_terminal(self, timeout_s: float = 30.0) -> bool:
        """Spin until no job is queued or running (threaded executor mode)."""
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            with self._lock:
                busy = any(j.state in (JobState.QUEUED, JobState.RUNNING)
                           for j in self.registry.list_jobs())
            if not busy:
                return True
            time.sleep(0.01)
        return False

    def close(self) -> None:
        self.executor.shutdown()
        self.log.close()
