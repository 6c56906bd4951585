"""Built-in Monte Carlo applications: quarter-circle pi estimation and
mono-energetic 1D slab transport with isotropic scattering.

Workloads are splittable into tasks whose integer tallies merge into one
estimate.  History g (global index over the whole workload) always runs
on the stream ``substream(master_seed, g)`` no matter which task owns it,
so the merged estimate is bit-identical for any task count and any
completion order.  Each task additionally carries its own distinct seed,
an avalanche mix of (master_seed, task_index), as its stream identity.

Per-history draw discipline for the slab app (scalar reference in
``_slab_history``):

    1. path length  s = -ln(u) / sigma_t        u in (0, 1]
    2. if still inside the slab, branch draw    absorbed iff u' < sigma_a/sigma_t
    3. on scatter, direction draw mu = 2u''-1, redrawn while |mu| < 1e-12

The pi app spends draws 0 (x) and 1 (y) of each history's stream.  The
vectorized implementations consume draws with exactly the same
per-history counters, so they match the scalar reference bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng

APP_PI = "pi"
APP_SLAB = "slab"
APPS = (APP_PI, APP_SLAB)

MU_EPSILON = 1e-12  # grazing-angle redraw guard

_PI_CHUNK = 1 << 19
_SLAB_CHUNK = 1 << 17


class WorkloadError(ValueError):
    """Invalid workload parameters."""


class BadTaskCount(WorkloadError):
    """n_tasks outside [1, total_samples]."""


class MissingTask(WorkloadError):
    """A task index is absent from the tallies being merged."""


class DuplicateTask(WorkloadError):
    """A task index occurs more than once in the tallies being merged."""


@dataclass(frozen=True)
class WorkloadSpec:
    app: str
    total_samples: int
    master_seed: int
    sigma_t: float = 0.0
    sigma_a: float = 0.0
    thickness: float = 0.0

    def validate(self) -> None:
        if self.app not in APPS:
            raise WorkloadError(f"unknown app {self.app!r}")
        if self.total_samples < 1:
            raise WorkloadError("total_samples must be >= 1")
        if not 0 <= self.master_seed < (1 << 64):
            raise WorkloadError("master_seed must be an unsigned 64-bit integer")
        if self.app == APP_SLAB:
            if not self.sigma_t > 0:
                raise WorkloadError("sigma_t must be > 0")
            if not 0 < self.sigma_a <= self.sigma_t:
                raise WorkloadError("sigma_a must be in (0, sigma_t]")
            if self.thickness < 0:
                raise WorkloadError("thickness must be >= 0")


@dataclass(frozen=True)
class TaskSpec:
    job_id: int
    task_index: int
    samples: int
    sample_offset: int  # global index of this task's first history
    seed: int  # task stream identity, distinct per task_index
    app: str
    master_seed: int
    sigma_t: float = 0.0
    sigma_a: float = 0.0
    thickness: float = 0.0


@dataclass(frozen=True)
class TaskTally:
    task_index: int
    samples_done: int
    app: str
    hits: int = 0
    transmitted: int = 0
    absorbed: int = 0
    backscattered: int = 0


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int
    app: str
    counters: dict = field(default_factory=dict)
    per_bin: dict = field(default_factory=dict)


def split_workload(spec: WorkloadSpec, n_tasks: int, job_id: int = 0) -> list[TaskSpec]:
    """Partition a workload into `n_tasks` independently-seeded tasks.

    Samples split as evenly as possible: the first ``total % n_tasks``
    tasks carry one extra sample.  Task seeds are derived from the master
    seed by an avalanche mix, so they are pairwise distinct and order-free.
    """
    spec.validate()
    if not 1 <= n_tasks <= spec.total_samples:
        raise BadTaskCount(
            f"n_tasks must be in [1, {spec.total_samples}], got {n_tasks}"
        )
    base, extra = divmod(spec.total_samples, n_tasks)
    tasks = []
    offset = 0
    for i in range(n_tasks):
        samples = base + (1 if i < extra else 0)
        tasks.append(
            TaskSpec(
                job_id=job_id,
                task_index=i,
                samples=samples,
                sample_offset=offset,
                seed=rng.substream(spec.master_seed, i),
                app=spec.app,
                master_seed=spec.master_seed,
                sigma_t=spec.sigma_t,
                sigma_a=spec.sigma_a,
                thickness=spec.thickness,
            )
        )
        offset += samples
    return tasks


def run_task(task: TaskSpec) -> TaskTally:
    """Run a task of either app; pure function of the TaskSpec."""
    if task.app == APP_PI:
        return run_pi_task(task)
    if task.app == APP_SLAB:
        return run_slab_task(task)
    raise WorkloadError(f"unknown app {task.app!r}")


def run_pi_task(task: TaskSpec) -> TaskTally:
    """Count points of the unit square falling inside the quarter circle.

    History g draws x and y as draws 0 and 1 of substream(master_seed, g).
    """
    if task.app != APP_PI:
        raise WorkloadError(f"run_pi_task got app {task.app!r}")
    hits = 0
    done = 0
    while done < task.samples:
        m = min(_PI_CHUNK, task.samples - done)
        hseed = rng.substream_array(task.master_seed, task.sample_offset + done, m)
        zeros = np.zeros(m, dtype=np.uint64)
        x = rng.unit_array(rng.values_at(hseed, zeros))
        y = rng.unit_array(rng.values_at(hseed, zeros + np.uint64(1)))
        hits += int(np.count_nonzero(x * x + y * y < 1.0))
        done += m
    return TaskTally(task_index=task.task_index, samples_done=task.samples,
                     app=APP_PI, hits=hits)


def _slab_history(hseed: int, sigma_t: float, sigma_a: float,
                  thickness: float) -> str:
    """Scalar reference for one slab history; returns the terminal bin."""
    p_abs = sigma_a / sigma_t
    x = 0.0
    mu = 1.0
    k = 0
    while True:
        u = rng.unit_open(rng.value(hseed, k))
        k += 1
        x += (-math.log(u) / sigma_t) * mu
        if x >= thickness:
            return "transmitted"
        if x < 0:
            return "backscattered"
        u = rng.unit(rng.value(hseed, k))
        k += 1
        if u < p_abs:
            return "absorbed"
        while True:
            u = rng.unit(rng.value(hseed, k))
            k += 1
            mu = 2.0 * u - 1.0
            if abs(mu) >= MU_EPSILON:
                break


def run_slab_task(task: TaskSpec) -> TaskTally:
    """Transport `samples` histories through the slab; integer tallies only.

    History h runs on substream(task.seed, h); the vectorized loop keeps a
    per-history draw counter so results equal the scalar reference exactly.
    """
    if task.app != APP_SLAB:
        raise WorkloadError(f"run_slab_task got app {task.app!r}")
    sigma_t, sigma_a, thickness = task.sigma_t, task.sigma_a, task.thickness
    if not sigma_t > 0 or not 0 < sigma_a <= sigma_t or thickness < 0:
        raise WorkloadError("invalid slab parameters")
    p_abs = sigma_a / sigma_t

    transmitted = absorbed = backscattered = 0
    done = 0
    while done < task.samples:
        m = min(_SLAB_CHUNK, task.samples - done)
        hseed = rng.substream_array(task.master_seed, task.sample_offset + done, m)
        kctr = np.zeros(m, dtype=np.uint64)
        x = np.zeros(m, dtype=np.float64)
        mu = np.ones(m, dtype=np.float64)

        while hseed.size:
            u = rng.values_at(hseed, kctr)
            kctr += np.uint64(1)
            x = x + (-np.log(rng.unit_open_array(u)) / sigma_t) * mu

            trans = x >= thickness
            back = ~trans & (x < 0.0)
            transmitted += int(np.count_nonzero(trans))
            backscattered += int(np.count_nonzero(back))

            inside = ~(trans | back)
            hseed, kctr, x, mu = hseed[inside], kctr[inside], x[inside], mu[inside]
            if not hseed.size:
                break

            u = rng.values_at(hseed, kctr)
            kctr += np.uint64(1)
            absorb = rng.unit_array(u) < p_abs
            absorbed += int(np.count_nonzero(absorb))

            scat = ~absorb
            hseed, kctr, x = hseed[scat], kctr[scat], x[scat]
            if not hseed.size:
                break

            u = rng.values_at(hseed, kctr)
            kctr += np.uint64(1)
            mu = 2.0 * rng.unit_array(u) - 1.0
            grazing = np.abs(mu) < MU_EPSILON
            while np.any(grazing):
                u = rng.values_at(hseed[grazing], kctr[grazing])
                kctr[grazing] += np.uint64(1)
                mu[grazing] = 2.0 * rng.unit_array(u) - 1.0
                grazing = np.abs(mu) < MU_EPSILON
        done += m

    return TaskTally(task_index=task.task_index, samples_done=task.samples,
                     app=APP_SLAB, transmitted=transmitted, absorbed=absorbed,
                     backscattered=backscattered)


def estimate_from_totals(app: str, n: int, counters: dict) -> Estimate:
    """Build the estimate from summed integer counters; floating point
    enters only here, so equal totals always give bit-equal estimates."""
    if n < 1:
        raise WorkloadError("sample count must be >= 1")
    if app == APP_PI:
        hits = int(counters["hits"])
        p = hits / n
        return Estimate(
            mean=4.0 * p,
            std_error=4.0 * math.sqrt(p * (1.0 - p) / n),
            n=n,
            app=APP_PI,
            counters={"hits": hits},
        )
    if app == APP_SLAB:
        totals = {name: int(counters[name])
                  for name in ("transmitted", "absorbed", "backscattered")}
        per_bin = {}
        for name, k in totals.items():
            f = k / n
            per_bin[name] = (f, math.sqrt(f * (1.0 - f) / n))
        return Estimate(
            mean=per_bin["transmitted"][0],
            std_error=per_bin["transmitted"][1],
            n=n,
            app=APP_SLAB,
            counters=totals,
            per_bin=per_bin,
        )
    raise WorkloadError(f"unknown app {app!r}")


def merge_tallies(tallies: list[TaskTally]) -> Estimate:
    """Merge task tallies into one estimate.

    Counters are summed as integers and the estimate is computed from the
    totals alone, so the result is independent of arrival order.
    """
    if not tallies:
        raise MissingTask("no tallies to merge")
    seen: set[int] = set()
    for t in tallies:
        if t.task_index in seen:
            raise DuplicateTask(f"task {t.task_index} tallied twice")
        seen.add(t.task_index)
    expected = set(range(len(tallies)))
    if seen != expected:
        missing = sorted(expected - seen)
        raise MissingTask(f"missing task indices {missing}")
    apps = {t.app for t in tallies}
    if len(apps) != 1:
        raise WorkloadError(f"mixed apps in merge: {sorted(apps)}")
    app = apps.pop()
    n = sum(t.samples_done for t in tallies)
    if app == APP_PI:
        return estimate_from_totals(app, n, {"hits": sum(t.hits for t in tallies)})
    return estimate_from_totals(app, n, {
        "transmitted": sum(t.transmitted for t in tallies),
        "absorbed": sum(t.absorbed for t in tallies),
        "backscattered": sum(t.backscattered for t in tallies),
    })


def analytic_transmission(sigma_t: float, thickness: float) -> float:
    """Uncollided transmission through a slab: exp(-sigma_t * thickness).

    Exact for a pure absorber; used as the closed-form test oracle.
    """
    if sigma_t <= 0:
        raise WorkloadError("sigma_t must be > 0")
    if thickness < 0:
        raise WorkloadError("thickness must be >= 0")
    return math.exp(-sigma_t * thickness)


def render_result_block(est: Estimate) -> str:
    """Flat key=value text block, one pair per line, keys sorted."""
    fields: dict[str, object] = {"app": est.app, "n": est.n,
                                 "mean": est.mean, "std_error": est.std_error}
    fields.update(est.counters)
    for name, (f, se) in est.per_bin.items():
        fields[f"{name}_fraction"] = f
        fields[f"{name}_se"] = se
    lines = []
    for key in sorted(fields):
        v = fields[key]
        lines.append(f"{key}={v!r}" if isinstance(v, float) else f"{key}={v}")
    return "\n".join(lines) + "\n"
