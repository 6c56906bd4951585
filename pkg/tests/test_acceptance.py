"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to watch the lines appear.
"""

import json
import math
import random
import time

from fastapi.testclient import TestClient

from publicmc import workload as wl
from publicmc.api import create_app
from publicmc.cluster import Cluster, ManualClock
from publicmc.config import ServiceConfig
from publicmc.jobs import JobState, render_job_script
from publicmc.nodes import NodeDescriptor
from publicmc.workload import WorkloadSpec

from lifecycle import (assert_history_legal, make_sim_cluster,
                       run_random_lifecycle)
from oracle_sched import (TraceJob, TraceNode, check_capacity, simulate_easy,
                          simulate_fifo)


def report(criterion: str, ok: bool, detail: str = ""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


# =====================================================================
# 1. pi workload through the full service: 1e6 samples, 4 tasks,
#    2 simulated nodes, inside 3 standard errors and 10 seconds.

class TestCriterion1Pi:
    def test_pi_through_http_on_two_nodes(self, tmp_path):
        cfg = ServiceConfig(
            data_dir=str(tmp_path / "data"),
            nodes=(NodeDescriptor("n1", 2, 1024), NodeDescriptor("n2", 2, 1024)),
        )
        cluster = Cluster(cfg)  # system clock + threaded executor
        client = TestClient(create_app(cluster))
        try:
            client.post("/register", json={"username": "alice",
                                           "password": "s3cretpass"})
            token = client.post("/login", json={
                "username": "alice", "password": "s3cretpass"}).json()["token"]
            headers = {"Authorization": f"Bearer {token}"}

            script = render_job_script(
                4, 3600, WorkloadSpec(app="pi", total_samples=10**6,
                                      master_seed=42))
            t0 = time.monotonic()
            r = client.post("/jobs", json={"script": script}, headers=headers)
            assert r.status_code == 201
            job_id = r.json()["job_id"]

            detail = None
            while time.monotonic() - t0 < 10.0:
                detail = client.get(f"/jobs/{job_id}",
                                    headers=headers).json()
                if detail["state"] in ("completed", "failed"):
                    break
                time.sleep(0.05)
            elapsed = time.monotonic() - t0

            assert detail["state"] == "completed", detail
            from publicmc import events as ev_mod
            placements = [
                r.payload["placements"]
                for r in ev_mod.read_log(cluster.log.path)
                if r.kind == "allocation_applied"
                and r.payload["job_id"] == job_id]
            nodes_used = {node_id for node_id, _ in placements[0]}
            result = detail["result"]
            err = abs(result["mean"] - math.pi)
            ok = (err <= 3 * result["std_error"] and elapsed < 10.0
                  and nodes_used == {"n1", "n2"})
            report("criterion 1 (pi on the wire)", ok,
                   f"|est-pi|={err:.2e} <= 3*se={3*result['std_error']:.2e}, "
                   f"wall={elapsed:.2f}s, n={result['n']}, "
                   f"spread over {sorted(nodes_used)}")
        finally:
            cluster.close()


# =====================================================================
# 2. pure absorber vs the attenuation law, plus a 100-seed gate.

class TestCriterion2Absorber:
    def test_single_run_at_1e6(self):
        spec = WorkloadSpec(app="slab", total_samples=10**6, master_seed=42,
                            sigma_t=1.0, sigma_a=1.0, thickness=1.0)
        est = wl.merge_tallies([wl.run_slab_task(t)
                                for t in wl.split_workload(spec, 4)])
        frac, se = est.per_bin["transmitted"]
        expected = wl.analytic_transmission(1.0, 1.0)
        ok = abs(frac - expected) <= 3 * se
        report("criterion 2a (pure absorber, n=1e6)", ok,
               f"|{frac:.6f} - {expected:.6f}| <= 3*{se:.2e}")

    def test_hundred_seed_gate(self):
        expected = wl.analytic_transmission(1.0, 1.0)
        n = 10**5
        passes = 0
        for seed in range(100):
            spec = WorkloadSpec(app="slab", total_samples=n, master_seed=seed,
                                sigma_t=1.0, sigma_a=1.0, thickness=1.0)
            [task] = wl.split_workload(spec, 1)
            tally = wl.run_slab_task(task)
            frac = tally.transmitted / n
            se = math.sqrt(frac * (1 - frac) / n)
            if abs(frac - expected) <= 3 * se:
                passes += 1
        report("criterion 2b (100-seed absorber gate)", passes >= 99,
               f"{passes}/100 seeds within 3 standard errors")


# =====================================================================
# 3. scattering slab vs the independent brute-force reference at n=1e7.

# Frozen output of tests/oracle_slab.py (Mersenne Twister, seed 777):
#   python tests/oracle_slab.py 10000000 1.0 0.5 2.0 777
ORACLE_10M = {"transmitted": 1893433, "absorbed": 6978501,
              "backscattered": 1128066}
ORACLE_N = 10**7


class TestCriterion3ScatteringOracle:
    def test_matches_brute_force_reference(self):
        spec = WorkloadSpec(app="slab", total_samples=ORACLE_N, master_seed=42,
                            sigma_t=1.0, sigma_a=0.5, thickness=2.0)
        est = wl.merge_tallies([wl.run_slab_task(t)
                                for t in wl.split_workload(spec, 8)])
        worst = 0.0
        for name in ("transmitted", "absorbed", "backscattered"):
            f_pkg, se_pkg = est.per_bin[name]
            f_ref = ORACLE_10M[name] / ORACLE_N
            se_ref = math.sqrt(f_ref * (1 - f_ref) / ORACLE_N)
            sigma_distance = abs(f_pkg - f_ref) / math.hypot(se_pkg, se_ref)
            worst = max(worst, sigma_distance)
        report("criterion 3 (scattering vs independent oracle, n=1e7)",
               worst <= 4.0,
               f"worst bin at {worst:.2f} combined standard errors (<= 4)")


# =====================================================================
# 4. distributed determinism: task counts and completion order never
#    change a single bit of the estimate.

class TestCriterion4Determinism:
    def test_module_level_shuffles(self):
        spec = WorkloadSpec(app="slab", total_samples=200_000, master_seed=13,
                            sigma_t=1.0, sigma_a=0.5, thickness=2.0)
        shuffler = random.Random(999)
        estimates = set()
        for n_tasks in (1, 4, 16):
            tallies = [wl.run_slab_task(t)
                       for t in wl.split_workload(spec, n_tasks)]
            for _ in range(4):
                shuffler.shuffle(tallies)
                estimates.add(repr(wl.merge_tallies(tallies)))
            estimates.add(repr(wl.merge_tallies(list(reversed(tallies)))))
        ok = len(estimates) == 1
        report("criterion 4a (module-level determinism)", ok,
               f"{len(estimates)} distinct estimates across task counts "
               "and shuffles (want 1)")

    def test_cluster_level_adversarial_completion(self, tmp_path):
        # run the same workload with 1, 4 and 16 cpus under two executors
        # whose completion orders are reversed; all results bit-identical
        script = {}
        for cpus in (1, 4, 16):
            script[cpus] = render_job_script(
                cpus, 3600, WorkloadSpec(app="pi", total_samples=200_000,
                                         master_seed=13))
        results = []
        for order_name, duration_fn in (
                ("ascending", lambda h: 1.0 + h.task_index),
                ("descending", lambda h: 20.0 - h.task_index)):
            for cpus in (1, 4, 16):
                cluster, clock = make_sim_cluster(
                    tmp_path / f"{order_name}{cpus}",
                    nodes=[NodeDescriptor("n1", 8, 4096),
                           NodeDescriptor("n2", 8, 4096)],
                    duration_fn=duration_fn)
                user = cluster.register_user("alice", "s3cretpass")
                job_id = cluster.submit_job(user.user_id, script[cpus])
                for _ in range(30):
                    clock.advance(1.0)
                    cluster.tick()
                job = cluster.get_job(job_id)
                assert job.state == JobState.COMPLETED, (order_name, cpus)
                results.append(job.result)
                cluster.close()
        ok = all(r == results[0] for r in results)
        report("criterion 4b (cluster-level determinism)", ok,
               f"{len(set(map(repr, results)))} distinct results over "
               "6 runs (want 1)")


# =====================================================================
# 5. scheduler: the hand trace reproduces exactly and 1000 random traces
#    stay capacity-safe with the EASY guarantee intact.

class TestCriterion5Scheduler:
    def test_hand_trace(self):
        jobs = [TraceJob(1, 0.0, 6, 100.0), TraceJob(2, 0.0, 8, 100.0),
                TraceJob(3, 0.0, 2, 100.0), TraceJob(4, 0.0, 2, 150.0)]
        nodes = [TraceNode("n1", 4), TraceNode("n2", 4)]
        starts, allocations, reservations = simulate_easy(jobs, nodes)
        ok = (starts[1] == 0.0 and starts[3] == 0.0 and starts[2] == 100.0
              and starts[4] == 200.0 and reservations.get(2) == 100.0)
        report("criterion 5a (A/B/C/D hand trace)", ok,
               f"starts={starts}, reservation for B at "
               f"{reservations.get(2)}")

    def test_thousand_random_traces(self):
        rnd = random.Random(5150)
        capacity_violations = 0
        reservation_violations = 0
        fifo_violations = 0
        heads_checked = 0
        for _ in range(1000):
            n_nodes = rnd.randint(1, 3)
            nodes = [TraceNode(f"n{i+1}", rnd.randint(1, 4))
                     for i in range(n_nodes)]
            total = sum(n.cpus for n in nodes)
            jobs = [TraceJob(i + 1, float(rnd.randint(0, 10)),
                             rnd.randint(1, total),
                             float(rnd.randint(1, 20)))
                    for i in range(rnd.randint(1, 6))]
            starts, allocations, reservations = simulate_easy(jobs, nodes)
            assert set(starts) == {j.job_id for j in jobs}
            if check_capacity(allocations, {j.job_id: j for j in jobs},
                              nodes) is not None:
                capacity_violations += 1
            for job_id, reserved_at in reservations.items():
                heads_checked += 1
                if starts[job_id] > reserved_at:
                    reservation_violations += 1
            if reservations:
                first_head = next(iter(reservations))
                fifo = simulate_fifo(jobs, nodes)
                if starts[first_head] > fifo[first_head]:
                    fifo_violations += 1
        ok = (capacity_violations == 0 and reservation_violations == 0
              and fifo_violations == 0 and heads_checked > 100)
        report("criterion 5b (1000 random traces vs brute force)", ok,
               f"capacity={capacity_violations}, "
               f"head-past-reservation={reservation_violations}, "
               f"first-head-vs-FIFO={fifo_violations} violations "
               f"({heads_checked} blocked heads checked)")


# =====================================================================
# 6. gateway fuzz: 1e5 command lines; nothing unwhitelisted dispatches,
#    nothing escapes the workspace, the audit log cross-references fully.

def _fuzz_lines(rnd, count):
    meta = [";", "&&", "||", "|", "`id`", "$(reboot)", ">", "<", "&",
            "\n", "\\", "'", '"']
    words = ["ls", "cat", "echo", "pwd", "qsub", "qstat", "qdel", "qnodes",
             "rm", "chmod", "curl", "python3", "sh", "bash", "-rf", "-l",
             "-a", "--help", "/etc/passwd", "../../etc/shadow",
             "..\\..\\win", "~/secrets", "job-1.out", "run.job", "*", "."]
    for _ in range(count):
        n = rnd.randint(1, 5)
        parts = []
        for _ in range(n):
            r = rnd.random()
            if r < 0.55:
                parts.append(rnd.choice(words))
            elif r < 0.8:
                parts.append(rnd.choice(meta))
            else:
                parts.append("".join(rnd.choice(
                    "abcdefghijklmnopqrstuvwxyz./-_$`\"' ")
                    for _ in range(rnd.randint(1, 10))))
        yield " ".join(parts)


class TestCriterion6GatewayFuzz:
    def test_hundred_thousand_lines(self, tmp_path):
        cluster, clock = make_sim_cluster(tmp_path / "data")
        try:
            user = cluster.register_user("fuzzer", "s3cretpass")
            # a secret outside any workspace must never surface
            sentinel = tmp_path / "data" / "secret.txt"
            sentinel.write_text("SENTINEL-DO-NOT-LEAK")
            whitelisted = set(cluster.whitelist.entries)

            rnd = random.Random(77)
            dispatched = []
            verdict_by_request = {}
            for line in _fuzz_lines(rnd, 100_000):
                request, verdict, receipt = cluster.submit_command(
                    user.user_id, line)
                verdict_by_request[request.request_id] = (line, verdict)
                if receipt is not None:
                    dispatched.append((request.request_id, line, receipt))

            from publicmc.gateway import split_command, CommandParseError
            outside_whitelist = 0
            escapes = 0
            for request_id, line, receipt in dispatched:
                try:
                    name = split_command(line)[0]
                except CommandParseError:
                    outside_whitelist += 1
                    continue
                if name not in whitelisted:
                    outside_whitelist += 1
                blob = json.dumps(receipt.result)
                if "SENTINEL-DO-NOT-LEAK" in blob:
                    escapes += 1

            audited = {e["request_id"]: e for e in cluster.audit}
            missing_audit = sum(
                1 for request_id, _, _ in dispatched
                if request_id not in audited
                or audited[request_id]["allowed"] is not True)
            # and every single verdict, allowed or not, was audited
            unaudited_verdicts = sum(
                1 for rid in verdict_by_request if rid not in audited)

            ok = (outside_whitelist == 0 and escapes == 0
                  and missing_audit == 0 and unaudited_verdicts == 0
                  and len(dispatched) > 1000)
            report("criterion 6 (gateway fuzz, 1e5 lines)", ok,
                   f"dispatched={len(dispatched)}, "
                   f"outside_whitelist={outside_whitelist}, escapes={escapes}, "
                   f"audit_gaps={missing_audit + unaudited_verdicts}")
        finally:
            cluster.close()


# =====================================================================
# 7. crash recovery: kill the service at 20 random points in a 10-job
#    scenario; state replays and terminal results are bit-identical.

def _scenario_ops():
    """Deterministic op tape: 10 jobs, two cancels, interleaved time."""
    ops = []
    specs = []
    for i in range(10):
        if i % 3 == 2:
            script = render_job_script(
                2, 3600, WorkloadSpec(app="slab", total_samples=20_000,
                                      master_seed=100 + i, sigma_t=1.0,
                                      sigma_a=0.5, thickness=2.0))
        else:
            script = render_job_script(
                (i % 4) + 1, 3600,
                WorkloadSpec(app="pi", total_samples=20_000,
                             master_seed=200 + i))
        specs.append(script)
    for i, script in enumerate(specs):
        ops.append(("submit", script))
        if i % 2 == 1:
            ops.append(("tick", 1.0))
    ops.append(("cancel", 3))
    ops.append(("tick", 2.0))
    ops.append(("cancel", 7))
    ops.append(("tick", 2.0))
    return ops


def _run_scenario(data_dir, crash_at=None):
    """Run the op tape, optionally crashing (close+reopen) at one index."""

    def open_cluster(clock):
        return make_sim_cluster(
            data_dir, clock=clock,
            duration_fn=lambda h: 1.0 + (h.job_id % 3),
            nodes=[NodeDescriptor("n1", 4, 2048),
                   NodeDescriptor("n2", 4, 2048)])[0]

    clock = ManualClock()
    cluster = open_cluster(clock)
    user = cluster.register_user("alice", "s3cretpass")
    pre_crash = post_crash = None
    for index, (kind, arg) in enumerate(_scenario_ops()):
        if crash_at is not None and index == crash_at:
            pre_crash = cluster.snapshot_state()
            cluster.close()
            cluster = open_cluster(clock)
            post_crash = cluster.snapshot_state()
        if kind == "submit":
            cluster.submit_job(user.user_id, arg)
        elif kind == "cancel":
            cluster.cancel_job(user.user_id, arg)
        elif kind == "tick":
            clock.advance(arg)
            cluster.tick()
    for _ in range(50):
        if all(j.state not in (JobState.QUEUED, JobState.RUNNING)
               for j in cluster.list_jobs()):
            break
        clock.advance(1.0)
        cluster.tick()
    outcome = {
        j.job_id: (j.state.value,
                   j.cause.value if j.cause else None,
                   j.result.counters if j.result else None,
                   j.result.mean if j.result else None)
        for j in cluster.list_jobs()
    }
    cluster.close()
    return outcome, pre_crash, post_crash


def _strip_volatile(snapshot):
    """Drop fields recovery legitimately renews: running jobs' allocation
    windows (tasks restart from scratch with a fresh walltime window)."""
    out = json.loads(json.dumps(snapshot))
    for job in out["jobs"]:
        if job["state"] == "running" and job["allocation"]:
            job["allocation"] = {
                "placements": job["allocation"]["placements"]}
    return out


class TestCriterion7CrashRecovery:
    def test_twenty_crash_points(self, tmp_path):
        control, _, _ = _run_scenario(tmp_path / "control")
        assert len(control) == 10
        assert all(state in ("completed", "cancelled")
                   for state, _, _, _ in control.values())

        total_ops = len(_scenario_ops())
        rnd = random.Random(31337)
        crash_points = [rnd.randrange(1, total_ops) for _ in range(20)]
        mismatched_runs = 0
        replay_mismatches = 0
        for i, crash_at in enumerate(crash_points):
            outcome, pre, post = _run_scenario(tmp_path / f"crash{i}",
                                               crash_at=crash_at)
            if outcome != control:
                mismatched_runs += 1
            if json.dumps(_strip_volatile(pre), sort_keys=True) != \
                    json.dumps(_strip_volatile(post), sort_keys=True):
                replay_mismatches += 1
        ok = mismatched_runs == 0 and replay_mismatches == 0
        report("criterion 7 (crash recovery, 20 crash points)", ok,
               f"terminal-outcome mismatches={mismatched_runs}, "
               f"replay mismatches={replay_mismatches}")


# =====================================================================
# 8. lifecycle fuzz: 500 random interleavings; everything terminates,
#    requeues stay bounded, histories stay legal.

class TestCriterion8LifecycleFuzz:
    def test_five_hundred_runs(self, tmp_path):
        stuck = 0
        requeue_bound_broken = 0
        illegal_histories = 0
        for seed in range(500):
            terminal_ok, jobs, _ = run_random_lifecycle(
                seed, tmp_path / f"run{seed}")
            if not terminal_ok:
                stuck += 1
            for job in jobs:
                if job.requeue_count > 1:
                    requeue_bound_broken += 1
                try:
                    assert_history_legal(job)
                except AssertionError:
                    illegal_histories += 1
        ok = stuck == 0 and requeue_bound_broken == 0 \
            and illegal_histories == 0
        report("criterion 8 (lifecycle fuzz, 500 runs)", ok,
               f"stuck={stuck}, requeue_bound_broken={requeue_bound_broken}, "
               f"illegal_histories={illegal_histories}")
