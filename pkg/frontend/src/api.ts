// Typed client for the cluster's HTTP API. Every dashboard action funnels
// through one of the calls below; the ACTIONS table is the single source
// of truth for the UI-to-route parity check.

export interface Session {
  token: string;
  user_id: string;
  expires_at: number;
}

export interface JobSummary {
  job_id: number;
  owner: string;
  state: string;
  cause: string | null;
  cpus: number;
  walltime_s: number;
  app: string;
  submitted_at: number;
  requeue_count: number;
}

export interface JobResult {
  mean: number;
  std_error: number;
  n: number;
  counters: Record<string, number>;
  per_bin: Record<string, { fraction: number; std_error: number }>;
}

export interface JobDetail extends JobSummary {
  state_history: [string, number][];
  allocation: {
    placements: { node_id: string; cpus: number }[];
    start: number;
    deadline: number;
  } | null;
  result: JobResult | null;
}

export interface QueueView {
  queued: JobSummary[];
  reservation: {
    job_id: number;
    earliest_start: number;
    placements: { node_id: string; cpus: number }[];
  } | null;
}

export interface NodeView {
  node_id: string;
  state: string;
  cpus_capacity: number;
  cpus_free: number;
  mem_mb_capacity: number;
  mem_mb_free: number;
  running_jobs: number[];
}

export interface Metrics {
  nodes: Record<string, { state: string; utilization: number }>;
  queue_length: number;
  running: number;
  completed: number;
  failed: number;
  cancelled: number;
}

export interface CommandResponse {
  request_id: string;
  verdict: "allowed" | "rejected";
  command_class: string | null;
  reason: string | null;
  detail: string;
  receipt: {
    action: string;
    result: Record<string, unknown>;
    error: string;
  } | null;
}

// Every UI action and the one documented route it maps to.
export const ACTIONS = {
  register: { method: "POST", path: "/register" },
  login: { method: "POST", path: "/login" },
  logout: { method: "POST", path: "/logout" },
  "console-command": { method: "POST", path: "/commands" },
  "submit-job": { method: "POST", path: "/jobs" },
  "poll-jobs": { method: "GET", path: "/jobs" },
  "job-detail": { method: "GET", path: "/jobs/{id}" },
  "job-output": { method: "GET", path: "/jobs/{id}/output" },
  "cancel-job": { method: "DELETE", path: "/jobs/{id}" },
  "poll-nodes": { method: "GET", path: "/nodes" },
  "poll-queue": { method: "GET", path: "/queue" },
  "poll-metrics": { method: "GET", path: "/metrics" },
} as const;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
  }
}

export class ApiClient {
  token: string | null = null;

  constructor(
    public baseUrl: string,
    private onUnauthorized: () => void = () => {},
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    asText = false,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await fetch(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (response.status === 401) {
      this.onUnauthorized();
    }
    if (!response.ok) {
      let detail: unknown;
      try {
        detail = (await response.json()).detail;
      } catch {
        detail = response.statusText;
      }
      throw new ApiError(response.status, detail);
    }
    return (asText ? response.text() : response.json()) as Promise<T>;
  }

  async register(username: string, password: string): Promise<void> {
    await this.request("POST", "/register", { username, password });
  }

  async login(username: string, password: string): Promise<Session> {
    const session = await this.request<Session>("POST", "/login", {
      username,
      password,
    });
    this.token = session.token;
    return session;
  }

  async logout(): Promise<void> {
    await this.request("POST", "/logout", {});
    this.token = null;
  }

  command(line: string): Promise<CommandResponse> {
    return this.request("POST", "/commands", { line });
  }

  async submitJob(script: string): Promise<number> {
    const out = await this.request<{ job_id: number }>("POST", "/jobs", {
      script,
    });
    return out.job_id;
  }

  async listJobs(): Promise<JobSummary[]> {
    const out = await this.request<{ jobs: JobSummary[] }>("GET", "/jobs");
    return out.jobs;
  }

  jobDetail(jobId: number): Promise<JobDetail> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  jobOutput(jobId: number): Promise<string> {
    return this.request("GET", `/jobs/${jobId}/output`, undefined, true);
  }

  async cancelJob(jobId: number): Promise<string> {
    const out = await this.request<{ state: string }>(
      "DELETE",
      `/jobs/${jobId}`,
    );
    return out.state;
  }

  async nodes(): Promise<NodeView[]> {
    const out = await this.request<{ nodes: NodeView[] }>("GET", "/nodes");
    return out.nodes;
  }

  queue(): Promise<QueueView> {
    return this.request("GET", "/queue");
  }

  metrics(): Promise<Metrics> {
    return this.request("GET", "/metrics");
  }
}
