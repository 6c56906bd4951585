// Live dashboard-against-service checks. Needs a running cluster API:
//
//   publicmc --config ... &
//   PUBLICMC_E2E_BASE=http://127.0.0.1:8080 vitest run tests/e2e.live.test.ts
//
// Skipped when PUBLICMC_E2E_BASE is not set.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildJobScript } from "../src/jobscript.js";
import { SequencedPoller } from "../src/poller.js";
import { consoleEntryHtml, jobsTableHtml } from "../src/render.js";

const BASE = process.env.PUBLICMC_E2E_BASE ?? "";
const maybe = BASE ? describe : describe.skip;

function freshUser(): string {
  return `e2e${Date.now() % 100000}${Math.floor(Math.random() * 1000)}`;
}

maybe("dashboard against a live cluster", () => {
  it("logs in, submits through the form path, sees it via polling, "
     + "cancels, and gets verbatim verdicts", async () => {
    const api = new ApiClient(BASE);
    const username = freshUser();
    await api.register(username, "s3cretpass");
    await api.login(username, "s3cretpass");

    // the form-generated script parses on the real server
    const jobId = await api.submitJob(
      buildJobScript({
        app: "slab",
        cpus: 2,
        walltimeS: 600,
        samples: 200_000,
        seed: "42",
        sigmaT: 1.0,
        sigmaA: 0.5,
        thickness: 2.0,
      }),
    );
    expect(jobId).toBeGreaterThan(0);

    // liveness: the queue poller sees the job within one 2 s interval
    const seen: number[][] = [];
    const poller = new SequencedPoller(
      () => api.listJobs(),
      (jobs) => seen.push(jobs.map((j) => j.job_id)),
      () => {},
      500,
    );
    const t0 = Date.now();
    poller.start();
    while (Date.now() - t0 < 2000) {
      if (seen.length && seen[seen.length - 1].includes(jobId)) break;
      await new Promise((r) => setTimeout(r, 50));
    }
    poller.stop();
    expect(seen[seen.length - 1]).toContain(jobId);
    expect(Date.now() - t0).toBeLessThan(2000);

    // a second job saturates nothing: cancel it from the UI path
    const second = await api.submitJob(
      buildJobScript({
        app: "pi",
        cpus: 2,
        walltimeS: 600,
        samples: 100_000,
        seed: "7",
      }),
    );
    const stateAfter = await api.cancelJob(second);
    expect(["cancelled", "completed"]).toContain(stateAfter);
    const rows = jobsTableHtml(await api.listJobs(), null);
    expect(rows).toContain(`data-job="${second}"`);

    // console verdicts render verbatim
    const rejected = await api.command("rm -rf /");
    expect(rejected.verdict).toBe("rejected");
    const html = consoleEntryHtml("rm -rf /", rejected);
    expect(html).toContain("rejected");
    expect(html).toContain(rejected.reason!);

    const allowed = await api.command("qstat");
    expect(allowed.verdict).toBe("allowed");

    // the job eventually completes and its output is readable
    const t1 = Date.now();
    let state = "";
    while (Date.now() - t1 < 8000) {
      const detail = await api.jobDetail(jobId);
      state = detail.state;
      if (state === "completed" || state === "failed") break;
      await new Promise((r) => setTimeout(r, 200));
    }
    expect(state).toBe("completed");
    const output = await api.jobOutput(jobId);
    expect(output).toContain("transmitted=");
    await api.logout();
  }, 30000);
});
