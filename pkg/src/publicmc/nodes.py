"""Simulated compute nodes: capacity bookkeeping, heartbeats, failure
detection and task execution backends.

Two executors share one contract: tasks are launched with a handle and
their tallies come back through the cluster core.  ThreadedExecutor runs
workload chunks on real worker threads (one logical worker per allocated
cpu); SimulatedExecutor advances on a manual clock so fault-injection
tests are fully deterministic.  Thanks to the counter-based generator the
two produce bit-identical tallies.
"""

from __future__ import annotations

import dataclasses
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import workload
from .scheduler import NodeView, RunningSlice

NODE_UP = "up"
NODE_DOWN = "down"

HEARTBEAT_MISS_FACTOR = 3  # declared down after > 3 missed intervals


class NodeError(Exception):
    pass


class DuplicateNodeId(NodeError):
    pass


class NodeDownAtLaunch(NodeError):
    pass


class UnknownTask(NodeError):
    pass


@dataclass(frozen=True)
class NodeDescriptor:
    node_id: str
    cpus_capacity: int
    mem_mb_capacity: int


@dataclass(frozen=True)
class TaskHandle:
    """Identity of one launched task; incarnation guards against stale
    completions arriving after a requeue."""
    job_id: int
    task_index: int
    node_id: str
    incarnation: int
    spec: workload.TaskSpec


@dataclass(frozen=True)
class Heartbeat:
    node_id: str
    sent_at: float
    running_task_ids: frozenset  # of (job_id, task_index)


@dataclass
class _NodeState:
    descriptor: NodeDescriptor
    state: str = NODE_UP
    last_heartbeat: float = 0.0
    last_tasks: frozenset = frozenset()
    # job_id -> (cpus, mem_mb, expected_end)
    slices: dict = field(default_factory=dict)


class NodePool:
    """Registered nodes with allocation-level usage accounting."""

    def __init__(self, heartbeat_interval_s: float = 5.0):
        self.heartbeat_interval_s = heartbeat_interval_s
        self._nodes: dict[str, _NodeState] = {}

    def register(self, descriptor: NodeDescriptor, now: float) -> None:
        if descriptor.node_id in self._nodes:
            raise DuplicateNodeId(f"node {descriptor.node_id!r} already "
                                  "registered")
        if descriptor.cpus_capacity < 1 or descriptor.mem_mb_capacity < 1:
            raise NodeError("node capacities must be >= 1")
        self._nodes[descriptor.node_id] = _NodeState(
            descriptor=descriptor, last_heartbeat=now)

    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def is_up(self, node_id: str) -> bool:
        return self._node(node_id).state == NODE_UP

    def _node(self, node_id: str) -> _NodeState:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise NodeError(f"unknown node {node_id!r}") from None

    def heartbeat(self, node_id: str, now: float,
                  running_task_ids=frozenset()) -> bool:
        """Record a heartbeat; returns True when a Down node is knocking
        (the caller then flips it Up through the event stream)."""
        node = self._node(node_id)
        if now >= node.last_heartbeat:
            node.last_heartbeat = now
            node.last_tasks = frozenset(running_task_ids)
        return node.state == NODE_DOWN

    def last_heartbeat(self, node_id: str) -> Heartbeat:
        node = self._node(node_id)
        return Heartbeat(node_id, node.last_heartbeat, node.last_tasks)

    def overdue_nodes(self, now: float) -> list[str]:
        """Up nodes silent for more than the miss threshold (strict >)."""
        limit = HEARTBEAT_MISS_FACTOR * self.heartbeat_interval_s
        return [nid for nid in self.node_ids()
                if self._nodes[nid].state == NODE_UP
                and now - self._nodes[nid].last_heartbeat > limit]

    def mark_down(self, node_id: str) -> None:
        self._node(node_id).state = NODE_DOWN

    def mark_up(self, node_id: str) -> None:
        """A rejoining node comes back empty; its tasks were lost."""
        node = self._node(node_id)
        node.state = NODE_UP
        node.slices = {}

    def apply_allocation(self, job_id: int, placements, mem_mb_per_cpu: int,
                         expected_end: float) -> None:
        for p in placements:
            node = self._node(p.node_id)
            if node.state != NODE_UP:
                raise NodeDownAtLaunch(f"node {p.node_id!r} is down")
        for p in placements:
            node = self._nodes[p.node_id]
            cpus, mem, _ = node.slices.get(job_id, (0, 0, 0.0))
            node.slices[job_id] = (cpus + p.cpus,
                                   mem + p.cpus * mem_mb_per_cpu,
                                   expected_end)

    def release_job(self, job_id: int) -> None:
        for node in self._nodes.values():
            node.slices.pop(job_id, None)

    def jobs_on(self, node_id: str) -> list[int]:
        return sorted(self._node(node_id).slices)

    def views(self) -> list[NodeView]:
        """Scheduler-facing views of the Up nodes."""
        views = []
        for nid in self.node_ids():
            node = self._nodes[nid]
            if node.state != NODE_UP:
                continue
            running = tuple(
                RunningSlice(job_id, cpus, mem, end)
                for job_id, (cpus, mem, end) in sorted(node.slices.items()))
            views.append(NodeView(
                node_id=nid,
                cpus_capacity=node.descriptor.cpus_capacity,
                mem_mb_capacity=node.descriptor.mem_mb_capacity,
                running=running))
        return views

    def schedulable_cpus(self, mem_mb_per_cpu: int) -> int:
        """Cpus an empty cluster could ever grant at this memory demand."""
        total = 0
        for node in self._nodes.values():
            d = node.descriptor
            total += min(d.cpus_capacity,
                         d.mem_mb_capacity // mem_mb_per_cpu)
        return total

    def snapshot(self) -> list[dict]:
        out = []
        for nid in self.node_ids():
            node = self._nodes[nid]
            used_cpus = sum(c for c, _, _ in node.slices.values())
            out.append({
                "node_id": nid,
                "state": node.state,
                "cpus_capacity": node.descriptor.cpus_capacity,
                "cpus_free": node.descriptor.cpus_capacity - used_cpus,
                "mem_mb_capacity": node.descriptor.mem_mb_capacity,
                "mem_mb_free": node.descriptor.mem_mb_capacity
                - sum(m for _, m, _ in node.slices.values()),
                "running_jobs": sorted(node.slices),
            })
        return out


def run_task_interruptible(spec: workload.TaskSpec, should_stop,
                           chunk: int = 1 << 16) -> workload.TaskTally | None:
    """Run a task in chunks, checking the stop flag between chunks.

    Sub-ranges of the global history space sum to exactly the full task
    tally, so chunking never changes the result.
    """
    hits = transmitted = absorbed = backscattered = 0
    done = 0
    while done < spec.samples:
        if should_stop():
            return None
        m = min(chunk, spec.samples - done)
        sub = dataclasses.replace(spec, samples=m,
                                  sample_offset=spec.sample_offset + done)
        part = workload.run_task(sub)
        hits += part.hits
        transmitted += part.transmitted
        absorbed += part.absorbed
        backscattered += part.backscattered
        done += m
    if should_stop():
        return None
    return workload.TaskTally(
        task_index=spec.task_index, samples_done=spec.samples, app=spec.app,
        hits=hits, transmitted=transmitted, absorbed=absorbed,
        backscattered=backscattered)


class ThreadedExecutor:
    """Real parallel execution: one worker per allocated cpu, shared pool."""

    def __init__(self, deliver, max_workers: int = 8):
        self._deliver = deliver
        self._max_workers = max_workers
        self._pool = ThreadPoolExecutor(max_workers=max_workers,
                                        thread_name_prefix="mc-task")
        self._lock = threading.Lock()
        # (job_id, task_index, incarnation) -> (stop flag, node_id)
        self._stop_flags: dict[tuple[int, int, int],
                               tuple[threading.Event, str]] = {}

    def launch(self, handle: TaskHandle, now: float) -> None:
        key = (handle.job_id, handle.task_index, handle.incarnation)
        flag = threading.Event()
        with self._lock:
            self._stop_flags[key] = (flag, handle.node_id)

        def work():
            tally = run_task_interruptible(handle.spec, flag.is_set)
            if tally is not None:
                self._deliver(handle, tally)
            with self._lock:
                self._stop_flags.pop(key, None)

        self._pool.submit(work)

    def stop_job(self, job_id: int) -> None:
        with self._lock:
            for (jid, _, _), (flag, _) in self._stop_flags.items():
                if jid == job_id:
                    flag.set()

    def stop_node(self, node_id: str) -> None:
        with self._lock:
            for _, (flag, nid) in self._stop_flags.items():
                if nid == node_id:
                    flag.set()

    def running_tasks(self, node_id: str) -> frozenset:
        with self._lock:
            return frozenset((jid, tidx)
                             for (jid, tidx, _), (_, nid)
                             in self._stop_flags.items() if nid == node_id)

    def drain(self) -> None:
        """Wait for in-flight work; test helper, never call under a lock."""
        self._pool.shutdown(wait=True)
        self._pool = ThreadPoolExecutor(max_workers=self._max_workers,
                                        thread_name_prefix="mc-task")

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)


class SimulatedExecutor:
    """Discrete-time executor: tasks complete when the manual clock passes
    launch + duration_fn(handle); tallies are computed at delivery."""

    def __init__(self, duration_fn=None):
        self.duration_fn = duration_fn or (lambda handle: 0.0)
        self._pending: list[tuple[float, TaskHandle]] = []

    def launch(self, handle: TaskHandle, now: float) -> None:
        self._pending.append((now + float(self.duration_fn(handle)), handle))

    def poll(self, now: float) -> list[tuple[TaskHandle, workload.TaskTally]]:
        due = [(t, h) for t, h in self._pending if t <= now]
        self._pending = [(t, h) for t, h in self._pending if t > now]
        due.sort(key=lambda th: (th[0], th[1].job_id, th[1].task_index))
        return [(h, workload.run_task(h.spec)) for _, h in due]

    def stop_job(self, job_id: int) -> None:
        self._pending = [(t, h) for t, h in self._pending
                         if h.job_id != job_id]

    def stop_node(self, node_id: str) -> None:
        self._pending = [(t, h) for t, h in self._pending
                         if h.node_id != node_id]

    def pending_tasks(self, node_id: str | None = None) -> list[TaskHandle]:
        return [h for _, h in self._pending
                if node_id is None or h.node_id == node_id]

    def running_tasks(self, node_id: str) -> frozenset:
        return frozenset((h.job_id, h.task_index)
                         for _, h in self._pending if h.node_id == node_id)

    def shutdown(self) -> None:
        self._pending = []
