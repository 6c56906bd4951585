"""Policy engine deciding when, where and how queued jobs get processors.

Queued jobs are ordered by priority (waiting time minus a size penalty,
ties broken by lower job id).  Jobs start from the head of that order
while they fit.  When the head job cannot start, it gets a reservation at
the earliest instant the currently running jobs release enough capacity,
and later jobs may backfill only if they cannot disturb that reservation:
either they end by its start time or their placement stays off the
reserved capacity.

Placement is first-fit over nodes sorted by node id, packing each node
before moving on.  Expected end times assume every running job uses its
full walltime, which keeps every plan deterministic.

All functions are pure: they never mutate the caller's views and return
byte-stable results for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass


class SchedulerError(Exception):
    pass


class Unsatisfiable(SchedulerError):
    """The job cannot fit even on an idle cluster."""


@dataclass(frozen=True)
class JobRequest:
    """The scheduler-facing projection of a queued job."""
    job_id: int
    cpus: int
    mem_mb_per_cpu: int
    walltime_s: int
    submitted_at: float


@dataclass(frozen=True)
class RunningSlice:
    job_id: int
    cpus_used: int
    mem_mb_used: int
    expected_end: float


@dataclass(frozen=True)
class NodeView:
    node_id: str
    cpus_capacity: int
    mem_mb_capacity: int
    running: tuple[RunningSlice, ...] = ()

    @property
    def cpus_free(self) -> int:
        return self.cpus_capacity - sum(s.cpus_used for s in self.running)

    @property
    def mem_mb_free(self) -> int:
        return self.mem_mb_capacity - sum(s.mem_mb_used for s in self.running)


@dataclass(frozen=True)
class Placement:
    node_id: str
    cpus: int


@dataclass(frozen=True)
class Allocation:
    job_id: int
    placements: tuple[Placement, ...]
    start: float
    deadline: float


@dataclass(frozen=True)
class Reservation:
    job_id: int
    earliest_start: float
    reserved_placements: tuple[Placement, ...]
    mem_mb_per_cpu: int = 0  # memory claim backing each reserved cpu


@dataclass(frozen=True)
class SchedulePlan:
    allocations: tuple[Allocation, ...]
    reservation: Reservation | None


def compute_priority(job: JobRequest, now: float, w_wait: float = 1.0,
                     w_size: float = 0.0) -> float:
    """w_wait * wait_seconds - w_size * cpus; higher runs first."""
    return w_wait * (now - job.submitted_at) - w_size * job.cpus


def priority_order(queued: list[JobRequest], now: float, w_wait: float = 1.0,
                   w_size: float = 0.0) -> list[JobRequest]:
    return sorted(
        queued,
        key=lambda j: (-compute_priority(j, now, w_wait, w_size), j.job_id),
    )


class _State:
    """Mutable free/running bookkeeping used while building one plan."""

    def __init__(self, nodes: list[NodeView]):
        self.order = sorted((n.node_id for n in nodes))
        self.capacity = {n.node_id: (n.cpus_capacity, n.mem_mb_capacity)
                         for n in nodes}
        self.free = {n.node_id: (n.cpus_free, n.mem_mb_free) for n in nodes}
        self.running = {n.node_id: list(n.running) for n in nodes}

    def first_fit(self, job: JobRequest) -> tuple[Placement, ...] | None:
        remaining = job.cpus
        placements = []
        for node_id in self.order:
            cpus_free, mem_free = self.free[node_id]
            take = min(cpus_free, mem_free // job.mem_mb_per_cpu, remaining)
            if take > 0:
                placements.append(Placement(node_id, take))
                remaining -= take
            if remaining == 0:
                return tuple(placements)
        return None

    def commit(self, job: JobRequest, placements: tuple[Placement, ...],
               end: float) -> None:
        for p in placements:
            cpus_free, mem_free = self.free[p.node_id]
            mem_used = p.cpus * job.mem_mb_per_cpu
            self.free[p.node_id] = (cpus_free - p.cpus, mem_free - mem_used)
            self.running[p.node_id].append(
                RunningSlice(job.job_id, p.cpus, mem_used, end))

    def free_at(self, node_id: str, t: float) -> tuple[int, int]:
        """Projected free (cpus, mem) at time t, all walltimes honored."""
        cpus_cap, mem_cap = self.capacity[node_id]
        cpus = cpus_cap - sum(s.cpus_used for s in self.running[node_id]
                              if s.expected_end > t)
        mem = mem_cap - sum(s.mem_mb_used for s in self.running[node_id]
                            if s.expected_end > t)
        return cpus, mem

    def release_times(self) -> list[float]:
        ends = {s.expected_end for slices in self.running.values()
                for s in slices}
        return sorted(ends)


def _first_fit_at(state: _State, job: JobRequest,
                  t: float) -> tuple[Placement, ...] | None:
    remaining = job.cpus
    placements = []
    for node_id in state.order:
        cpus_free, mem_free = state.free_at(node_id, t)
        take = min(cpus_free, mem_free // job.mem_mb_per_cpu, remaining)
        if take > 0:
            placements.append(Placement(node_id, take))
            remaining -= take
        if remaining == 0:
            return tuple(placements)
    return None


def _reserve(state: _State, head: JobRequest, now: float) -> Reservation:
    for t in state.release_times():
        if t <= now:
            continue
        placements = _first_fit_at(state, head, t)
        if placements is not None:
            return Reservation(head.job_id, t, placements,
                               head.mem_mb_per_cpu)
    raise Unsatisfiable(
        f"job {head.job_id} needs {head.cpus} cpus x {head.mem_mb_per_cpu} MB "
        "and can never fit this cluster")


def earliest_start_reservation(head: JobRequest, nodes: list[NodeView],
                               now: float) -> Reservation:
    """Walk running jobs' expected end times, freeing capacity cumulatively;
    reserve first-fit placements at the first instant the head job fits."""
    return _reserve(_State(nodes), head, now)


def _violates_reservation(state: _State, job: JobRequest,
                          placements: tuple[Placement, ...],
                          res: Reservation) -> bool:
    """Would this job, running past the reservation, eat reserved capacity?"""
    reserved = {p.node_id: p.cpus for p in res.reserved_placements}
    for p in placements:
        r_cpus = reserved.get(p.node_id, 0)
        cpus_at, mem_at = state.free_at(p.node_id, res.earliest_start)
        if p.cpus > cpus_at - r_cpus:
            return True
        if p.cpus * job.mem_mb_per_cpu > mem_at - r_cpus * res.mem_mb_per_cpu:
            return True
    return False


def plan_schedule(queued: list[JobRequest], nodes: list[NodeView], now: float,
                  w_wait: float = 1.0, w_size: float = 0.0) -> SchedulePlan:
    """Start what fits, reserve for the blocked head, then backfill."""
    ordered = priority_order(queued, now, w_wait, w_size)
    state = _State(nodes)
    allocations: list[Allocation] = []

    def start(job: JobRequest, placements: tuple[Placement, ...]) -> None:
        deadline = now + job.walltime_s
        allocations.append(Allocation(job.job_id, placements, now, deadline))
        state.commit(job, placements, deadline)

    head_idx = None
    for i, job in enumerate(ordered):
        placements = state.first_fit(job)
        if placements is None:
            head_idx = i
            break
        start(job, placements)

    if head_idx is None:
        return SchedulePlan(tuple(allocations), None)

    head = ordered[head_idx]
    try:
        reservation = _reserve(state, head, now)
    except Unsatisfiable:
        # the head cannot fit the nodes that are up right now (e.g. a
        # requeued wide job while a node is down); it must wait for a
        # topology change, so no reservation constrains the others
        reservation = None

    for job in ordered[head_idx + 1:]:
        placements = state.first_fit(job)
        if placements is None:
            continue
        if reservation is None:
            start(job, placements)
            continue
        fits_before_head = now + job.walltime_s <= reservation.earliest_start
        if fits_before_head or not _violates_reservation(
                state, job, placements, reservation):
            start(job, placements)

    return SchedulePlan(tuple(allocations), reservation)
