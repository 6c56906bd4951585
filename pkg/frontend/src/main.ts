// Dashboard bootstrap: login flow, 2-second pollers, submit form,
// cancel buttons, job detail pane and the command console.

import { ApiClient, ApiError, JobSummary, Metrics } from "./api.js";
import { buildJobScript, JobForm, validateForm } from "./jobscript.js";
import { SequencedPoller } from "./poller.js";
import {
  consoleEntryHtml,
  escapeHtml,
  jobDetailHtml,
  jobsTableHtml,
  metricsHtml,
  nodeBarsHtml,
  reservationHtml,
} from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function defaultApiBase(): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  if (fromQuery) return fromQuery;
  return localStorage.getItem("publicmc.api") ?? "http://127.0.0.1:8080";
}

interface PollerHandle {
  start(): void;
  stop(): void;
  pollOnce(): Promise<void>;
}

const state = {
  api: null as ApiClient | null,
  username: "",
  selectedJob: null as number | null,
  lastJobs: [] as JobSummary[],
  lastMetrics: null as Metrics | null,
  pollers: [] as PollerHandle[],
};

// ------------------------------------------------------------------ login

function showLogin(message = ""): void {
  for (const poller of state.pollers) poller.stop();
  state.pollers = [];
  state.api = null;
  el("login-view").style.display = "";
  el("dashboard-view").style.display = "none";
  el("login-message").textContent = message;
}

function showDashboard(): void {
  el("login-view").style.display = "none";
  el("dashboard-view").style.display = "";
  el("whoami").textContent = state.username;
  startPollers();
}

async function handleAuth(register: boolean): Promise<void> {
  const base = (el<HTMLInputElement>("api-base").value || "").trim();
  const username = el<HTMLInputElement>("username").value.trim();
  const password = el<HTMLInputElement>("password").value;
  localStorage.setItem("publicmc.api", base);
  const api = new ApiClient(base, () => showLogin("Session expired; log in."));
  try {
    if (register) {
      await api.register(username, password);
    }
    await api.login(username, password);
  } catch (err) {
    el("login-message").textContent = describeError(err);
    return;
  }
  state.api = api;
  state.username = username;
  showDashboard();
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    const d = err.detail as { message?: string } | string;
    if (typeof d === "object" && d && d.message) {
      return `${err.status}: ${d.message}`;
    }
    return `${err.status}: ${err.message}`;
  }
  return "Cannot reach the cluster API.";
}

// ------------------------------------------------------------------ polls

function setBanner(visible: boolean): void {
  el("banner").style.display = visible ? "" : "none";
}

function startPollers(): void {
  const api = state.api!;
  const jobsPoller = new SequencedPoller(
    () => api.listJobs(),
    (jobs) => {
      setBanner(false);
      state.lastJobs = jobs;
      el("jobs-table").innerHTML = jobsTableHtml(jobs, state.selectedJob);
      if (state.selectedJob !== null) void refreshDetail(state.selectedJob);
    },
    onPollError,
  );
  const queuePoller = new SequencedPoller(
    () => api.queue(),
    (queue) => {
      el("reservation").innerHTML = reservationHtml(queue);
    },
    onPollError,
  );
  const nodesPoller = new SequencedPoller(
    () => api.nodes(),
    (nodes) => {
      el("node-bars").innerHTML = nodeBarsHtml(nodes, state.lastMetrics);
    },
    onPollError,
  );
  const metricsPoller = new SequencedPoller(
    () => api.metrics(),
    (metrics) => {
      state.lastMetrics = metrics;
      el("metrics").innerHTML = metricsHtml(metrics);
    },
    onPollError,
  );
  state.pollers = [jobsPoller, queuePoller, nodesPoller, metricsPoller];
  for (const poller of state.pollers) poller.start();
}

function onPollError(err: unknown): void {
  if (!(err instanceof ApiError)) {
    setBanner(true); // connection loss; 401s are handled by the client
  }
}

// ------------------------------------------------------------- job detail

async function refreshDetail(jobId: number): Promise<void> {
  const api = state.api;
  if (!api) return;
  try {
    const detail = await api.jobDetail(jobId);
    let output: string | null = null;
    if (detail.state === "completed") {
      try {
        output = await api.jobOutput(jobId);
      } catch {
        output = null;
      }
    }
    el("job-detail").innerHTML = jobDetailHtml(detail, output);
  } catch (err) {
    el("job-detail").innerHTML =
      `<p class="bad">${escapeHtml(describeError(err))}</p>`;
  }
}

// ------------------------------------------------------------------ form

function readForm(): JobForm {
  const app = el<HTMLSelectElement>("form-app").value as "pi" | "slab";
  const form: JobForm = {
    app,
    cpus: Number(el<HTMLInputElement>("form-cpus").value),
    walltimeS: Number(el<HTMLInputElement>("form-walltime").value),
    samples: Number(el<HTMLInputElement>("form-samples").value),
    seed: el<HTMLInputElement>("form-seed").value,
  };
  if (app === "slab") {
    form.sigmaT = Number(el<HTMLInputElement>("form-sigma-t").value);
    form.sigmaA = Number(el<HTMLInputElement>("form-sigma-a").value);
    form.thickness = Number(el<HTMLInputElement>("form-thickness").value);
  }
  return form;
}

async function handleSubmitJob(event: Event): Promise<void> {
  event.preventDefault();
  const api = state.api;
  if (!api) return;
  const form = readForm();
  const errors = validateForm(form);
  const messageBox = el("submit-message");
  if (errors.length > 0) {
    messageBox.textContent = errors.join("; ");
    return;
  }
  try {
    const jobId = await api.submitJob(buildJobScript(form));
    messageBox.textContent = `Submitted job ${jobId}.`;
    state.selectedJob = jobId;
    for (const poller of state.pollers) void poller.pollOnce();
    void refreshDetail(jobId);
  } catch (err) {
    messageBox.textContent = describeError(err);
  }
}

// --------------------------------------------------------------- console

async function handleConsole(event: Event): Promise<void> {
  event.preventDefault();
  const api = state.api;
  if (!api) return;
  const input = el<HTMLInputElement>("console-input");
  const line = input.value;
  if (!line.trim()) return;
  input.value = "";
  try {
    const resp = await api.command(line);
    const log = el("console-log");
    log.innerHTML += consoleEntryHtml(line, resp);
    log.scrollTop = log.scrollHeight;
    for (const poller of state.pollers) void poller.pollOnce();
  } catch (err) {
    el("console-log").innerHTML +=
      `<div class="entry"><div class="cmd">$ ${escapeHtml(line)}</div>` +
      `<div class="bad">${escapeHtml(describeError(err))}</div></div>`;
  }
}

// ------------------------------------------------------------------ wire

export function wireUp(): void {
  el<HTMLInputElement>("api-base").value = defaultApiBase();
  el("login-form").addEventListener("submit", (e) => {
    e.preventDefault();
    void handleAuth(false);
  });
  el("register-button").addEventListener("click", () => void handleAuth(true));
  el("logout-button").addEventListener("click", () => {
    void state.api?.logout().catch(() => {});
    showLogin("Logged out.");
  });
  el("submit-form").addEventListener("submit", (e) => void handleSubmitJob(e));
  el("form-app").addEventListener("change", () => {
    const slab = el<HTMLSelectElement>("form-app").value === "slab";
    el("slab-fields").style.display = slab ? "" : "none";
  });
  el("console-form").addEventListener("submit", (e) => void handleConsole(e));
  el("jobs-table").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const cancelId = target.getAttribute("data-cancel");
    if (cancelId) {
      void state.api?.cancelJob(Number(cancelId)).then(() => {
        for (const poller of state.pollers) void poller.pollOnce();
      });
      return;
    }
    const row = target.closest(".job-row");
    if (row) {
      state.selectedJob = Number(row.getAttribute("data-job"));
      el("jobs-table").innerHTML = jobsTableHtml(state.lastJobs,
                                                 state.selectedJob);
      void refreshDetail(state.selectedJob);
    }
  });
  showLogin();
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wireUp);
}
