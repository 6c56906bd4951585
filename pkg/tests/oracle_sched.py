"""Brute-force scheduling oracles.

`simulate_fifo` is an independent no-backfill event simulator: jobs start
strictly in queue order and the head blocks everyone behind it.  It shares
no code with the package scheduler (its own placement arithmetic), so
comparing head start times against it is a genuine dual-route check.

`check_capacity` replays a finished schedule and asserts per-node cpu and
memory capacity at every start instant.

`simulate_easy` is the harness side: it drives the package planner event
by event over a trace and records starts, reservations and allocations.
"""

from dataclasses import dataclass

from publicmc import scheduler as sched


@dataclass(frozen=True)
class TraceJob:
    job_id: int
    submit: float
    cpus: int
    walltime: float
    mem_mb_per_cpu: int = 1


@dataclass(frozen=True)
class TraceNode:
    node_id: str
    cpus: int
    mem_mb: int = 1 << 20  # effectively unbounded unless a test narrows it


# ----------------------------------------------------------------------
# independent FIFO (no backfill) simulator


def _fifo_fit(job, free):
    """First-fit by node id; returns {node_id: cpus} or None."""
    remaining = job.cpus
    placement = {}
    for node_id in sorted(free):
        take = min(free[node_id], remaining)
        if take > 0:
            placement[node_id] = take
            remaining -= take
        if remaining == 0:
            return placement
    return None


def simulate_fifo(jobs, nodes):
    """Start times under strict queue order with a blocking head."""
    free = {n.node_id: n.cpus for n in nodes}
    pending = sorted(jobs, key=lambda j: (j.submit, j.job_id))
    queue = []
    running = []  # (end, job_id, placement)
    starts = {}
    t = pending[0].submit if pending else 0.0
    guard = 0
    while pending or queue or running:
        guard += 1
        assert guard < 100_000, "fifo simulator wedged"
        while pending and pending[0].submit <= t:
            queue.append(pending.pop(0))
        done = [r for r in running if r[0] <= t]
        running = [r for r in running if r[0] > t]
        for _, _, placement in done:
            for node_id, cpus in placement.items():
                free[node_id] += cpus
        # strict FIFO: stop at the first job that does not fit
        while queue:
            job = queue[0]
            placement = _fifo_fit(job, free)
            if placement is None:
                break
            queue.pop(0)
            starts[job.job_id] = t
            for node_id, cpus in placement.items():
                free[node_id] -= cpus
            running.append((t + job.walltime, job.job_id, placement))
        succ = []
        if pending:
            succ.append(pending[0].submit)
        if running:
            succ.append(min(r[0] for r in running))
        if not succ:
            break
        t = min(s for s in succ if s > t) if any(s > t for s in succ) \
            else min(succ)
    return starts


# ----------------------------------------------------------------------
# capacity checker over a produced schedule


def check_capacity(allocations, jobs_by_id, nodes):
    """Assert per-node cpu and memory limits at every start instant.

    `allocations`: list of (job_id, {node_id: cpus}, start, end).
    """
    caps = {n.node_id: (n.cpus, n.mem_mb) for n in nodes}
    instants = sorted({a[2] for a in allocations})
    for t in instants:
        for node_id, (cpu_cap, mem_cap) in caps.items():
            cpus = 0
            mem = 0
            for job_id, placement, start, end in allocations:
                if start <= t < end and node_id in placement:
                    cpus += placement[node_id]
                    mem += placement[node_id] * jobs_by_id[job_id].mem_mb_per_cpu
            if cpus > cpu_cap:
                return f"node {node_id} over cpu capacity at t={t}: {cpus}>{cpu_cap}"
            if mem > mem_cap:
                return f"node {node_id} over mem capacity at t={t}: {mem}>{mem_cap}"
    return None


# ----------------------------------------------------------------------
# harness driving the package planner over a trace


def simulate_easy(jobs, nodes, w_wait=1.0, w_size=0.0):
    """Drive plan_schedule event by event.

    Returns (starts, allocations, first_reservations) where allocations is
    a list of (job_id, {node_id: cpus}, start, end) and first_reservations
    maps each job that was ever the blocked head to the earliest_start of
    the first reservation it received, in the order heads appeared.
    """
    views_base = {n.node_id: n for n in nodes}
    pending = sorted(jobs, key=lambda j: (j.submit, j.job_id))
    queue = []
    running = []  # (end, JobRequest, placement dict)
    starts = {}
    allocations = []
    first_reservations: dict[int, float] = {}
    t = pending[0].submit if pending else 0.0
    guard = 0
    while pending or queue or running:
        guard += 1
        assert guard < 100_000, "easy harness wedged"
        while pending and pending[0].submit <= t:
            queue.append(pending.pop(0))
        running = [r for r in running if r[0] > t]

        node_views = []
        for node_id, n in sorted(views_base.items()):
            slices = tuple(
                sched.RunningSlice(req.job_id, placement[node_id],
                                   placement[node_id] * req.mem_mb_per_cpu,
                                   end)
                for end, req, placement in running if node_id in placement)
            node_views.append(sched.NodeView(node_id, n.cpus, n.mem_mb,
                                             slices))
        requests = [sched.JobRequest(j.job_id, j.cpus, j.mem_mb_per_cpu,
                                     j.walltime, j.submit) for j in queue]
        plan = sched.plan_schedule(requests, node_views, t,
                                   w_wait=w_wait, w_size=w_size)
        if plan.reservation is not None:
            first_reservations.setdefault(plan.reservation.job_id,
                                          plan.reservation.earliest_start)
        by_id = {j.job_id: j for j in queue}
        for alloc in plan.allocations:
            job = by_id[alloc.job_id]
            placement = {p.node_id: p.cpus for p in alloc.placements}
            starts[job.job_id] = t
            allocations.append((job.job_id, placement, t, alloc.deadline))
            running.append((alloc.deadline,
                            sched.JobRequest(job.job_id, job.cpus,
                                             job.mem_mb_per_cpu, job.walltime,
                                             job.submit),
                            placement))
            queue.remove(job)
        succ = [s for s in
                ([pending[0].submit] if pending else [])
                + [r[0] for r in running] if s > t]
        if not succ:
            if queue:
                raise AssertionError(
                    f"stuck queue at t={t}: {[j.job_id for j in queue]}")
            break
        t = min(succ)
    return starts, allocations, first_reservations
