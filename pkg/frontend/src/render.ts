// Pure HTML builders: data in, markup out. Keeping these free of DOM
// access makes the view logic testable under node.

import {
  CommandResponse,
  JobDetail,
  JobSummary,
  Metrics,
  NodeView,
  QueueView,
} from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatClock(ts: number): string {
  return new Date(ts * 1000).toLocaleTimeString();
}

const STATE_CLASS: Record<string, string> = {
  queued: "state-queued",
  running: "state-running",
  completed: "state-completed",
  failed: "state-failed",
  cancelled: "state-cancelled",
};

export function stateBadge(state: string, cause: string | null): string {
  const cls = STATE_CLASS[state] ?? "";
  const text = cause ? `${state} (${cause})` : state;
  return `<span class="badge ${cls}">${escapeHtml(text)}</span>`;
}

export function jobsTableHtml(
  jobs: JobSummary[],
  selected: number | null,
): string {
  if (jobs.length === 0) {
    return `<p class="empty">No jobs yet. Submit one above.</p>`;
  }
  const rows = jobs
    .map((job) => {
      const cancellable =
        job.state === "queued" || job.state === "running";
      const sel = job.job_id === selected ? " selected" : "";
      return `<tr class="job-row${sel}" data-job="${job.job_id}">
        <td>${job.job_id}</td>
        <td>${escapeHtml(job.owner)}</td>
        <td>${escapeHtml(job.app)}</td>
        <td>${stateBadge(job.state, job.cause)}</td>
        <td>${job.cpus}</td>
        <td>${job.walltime_s}</td>
        <td>${formatClock(job.submitted_at)}</td>
        <td>${
          cancellable
            ? `<button class="cancel" data-cancel="${job.job_id}">cancel</button>`
            : ""
        }</td>
      </tr>`;
    })
    .join("");
  return `<table>
    <thead><tr><th>id</th><th>owner</th><th>app</th><th>state</th>
    <th>cpus</th><th>walltime</th><th>submitted</th><th></th></tr></thead>
    <tbody>${rows}</tbody></table>`;
}

export function reservationHtml(queue: QueueView): string {
  if (queue.reservation === null) {
    return queue.queued.length === 0
      ? ""
      : `<p class="note">Queue is waiting for resources.</p>`;
  }
  const r = queue.reservation;
  const where = r.placements
    .map((p) => `${escapeHtml(p.node_id)}:${p.cpus}`)
    .join(", ");
  return `<p class="note">Head job ${r.job_id} holds a reservation from
    t=${r.earliest_start} on ${where}; later jobs may only backfill around
    it.</p>`;
}

export function nodeBarsHtml(nodes: NodeView[], metrics: Metrics | null): string {
  return nodes
    .map((node) => {
      const used = node.cpus_capacity - node.cpus_free;
      const util = metrics?.nodes[node.node_id]?.utilization ??
        used / node.cpus_capacity;
      const pct = Math.round(util * 100);
      const downCls = node.state === "up" ? "" : " bar-down";
      return `<div class="node">
        <span class="node-name">${escapeHtml(node.node_id)}
          <em>(${node.state})</em></span>
        <div class="bar${downCls}">
          <div class="bar-fill" style="width:${pct}%"></div>
        </div>
        <span class="node-cpus">${used}/${node.cpus_capacity} cpus</span>
      </div>`;
    })
    .join("");
}

export function metricsHtml(m: Metrics): string {
  const cells: [string, number][] = [
    ["queued", m.queue_length],
    ["running", m.running],
    ["completed", m.completed],
    ["failed", m.failed],
    ["cancelled", m.cancelled],
  ];
  return cells
    .map(([k, v]) => `<div class="stat"><b>${v}</b><span>${k}</span></div>`)
    .join("");
}

export function jobDetailHtml(detail: JobDetail, output: string | null): string {
  const history = detail.state_history
    .map(([state, at]) => `<li>${escapeHtml(state)} at ${formatClock(at)}</li>`)
    .join("");
  const placement = detail.allocation
    ? detail.allocation.placements
        .map((p) => `${escapeHtml(p.node_id)}:${p.cpus}`)
        .join(", ")
    : "-";
  let resultBlock = "";
  if (detail.result) {
    resultBlock = `<p>mean = <b>${detail.result.mean}</b>
      &plusmn; ${detail.result.std_error.toExponential(3)}
      over n=${detail.result.n}</p>`;
  }
  const outputBlock = output
    ? `<pre class="output">${escapeHtml(output)}</pre>`
    : `<p class="empty">No output yet.</p>`;
  return `<h3>Job ${detail.job_id}
      ${stateBadge(detail.state, detail.cause)}</h3>
    <p>${escapeHtml(detail.app)} &middot; ${detail.cpus} cpus &middot;
      walltime ${detail.walltime_s}s &middot; requeued
      ${detail.requeue_count}x &middot; placement: ${placement}</p>
    ${resultBlock}
    <ul class="history">${history}</ul>
    ${outputBlock}`;
}

export function consoleEntryHtml(line: string, resp: CommandResponse): string {
  // the verdict is displayed verbatim, rejection reasons included
  let verdict: string;
  if (resp.verdict === "allowed") {
    verdict = `<span class="ok">allowed</span> [${resp.command_class}]`;
  } else {
    verdict = `<span class="bad">rejected</span> (${escapeHtml(
      resp.reason ?? "",
    )}${resp.detail ? ": " + escapeHtml(resp.detail) : ""})`;
  }
  let body = "";
  if (resp.receipt) {
    if (resp.receipt.error) {
      body = `<div class="bad">${escapeHtml(resp.receipt.error)}</div>`;
    } else {
      body = `<pre>${escapeHtml(
        JSON.stringify(resp.receipt.result, null, 1),
      )}</pre>`;
    }
  }
  return `<div class="entry">
    <div class="cmd">$ ${escapeHtml(line)}</div>
    <div class="verdict">${verdict}</div>${body}</div>`;
}
