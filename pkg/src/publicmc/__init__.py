"""publicmc: a guarded public-cluster service for parallel Monte Carlo jobs.

Submodules:
    auth       session-authenticated user registry
    gateway    command classification, whitelist filtering and dispatch
    jobs       batch queue, job scripts and the job state machine
    scheduler  priority ordering, head-of-queue reservation, backfill
    nodes      simulated compute nodes, heartbeats, failure detection
    workload   splittable Monte Carlo applications with integer tallies
    events     append-only event log, the durable source of truth
    cluster    the single-writer core tying everything together
    api        HTTP+JSON surface
"""

__version__ = "0.1.0"
