import type {
  AcceptedResponse,
  AssignmentPlan,
  DispatchResponse,
  HealthzResponse,
  RegisterResponse,
  SynthesisReport,
  VetResponse,
  WhatIfEdits,
  WorldResponse,
} from "./types.js";

/** Error raised for any non-2xx API response, carrying the server's code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ClientOptions {
  baseUrl: string;
  token?: string;
  // injectable for tests; defaults to the global fetch
  fetchFn?: typeof fetch;
}

interface RequestOptions {
  method: "GET" | "POST";
  path: string;
  body?: unknown;
  query?: Record<string, string | number | undefined>;
}

/**
 * Typed client for the corec decision-maker API. Every method maps to exactly
 * one documented /api/v1 call; nothing here mutates state through any other
 * channel.
 */
export class ApiClient {
  private readonly baseUrl: string;
  private readonly token: string | undefined;
  private readonly fetchFn: typeof fetch;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.token = options.token;
    this.fetchFn = options.fetchFn ?? fetch;
  }

  private async request<T>(options: RequestOptions): Promise<T> {
    const url = new URL(`${this.baseUrl}/api/v1${options.path}`);
    for (const [key, value] of Object.entries(options.query ?? {})) {
      if (value !== undefined) {
        url.searchParams.set(key, String(value));
      }
    }
    const headers: Record<string, string> = {};
    if (this.token) {
      headers["authorization"] = `Bearer ${this.token}`;
    }
    if (options.body !== undefined) {
      headers["content-type"] = "application/json";
    }
    const response = await this.fetchFn(url, {
      method: options.method,
      headers,
      body: options.body === undefined ? undefined : JSON.stringify(options.body),
    });
    const text = await response.text();
    let parsed: unknown = undefined;
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = undefined;
      }
    }
    if (!response.ok) {
      const envelope = parsed as { error?: { code?: string; message?: string } } | undefined;
      throw new ApiError(
        response.status,
        envelope?.error?.code ?? "http",
        envelope?.error?.message ?? `HTTP ${response.status}`,
      );
    }
    return parsed as T;
  }

  healthz(): Promise<HealthzResponse> {
    return this.request({ method: "GET", path: "/healthz" });
  }

  register(application: Record<string, unknown>): Promise<RegisterResponse> {
    return this.request({ method: "POST", path: "/register", body: application });
  }

  vetRegistration(registrationId: string, verdict: "approved" | "rejected"): Promise<VetResponse> {
    return this.request({
      method: "POST",
      path: `/registrations/${encodeURIComponent(registrationId)}/vet`,
      body: { verdict },
    });
  }

  world(): Promise<WorldResponse> {
    return this.request({ method: "GET", path: "/world" });
  }

  submitReport(claim: Record<string, unknown>): Promise<AcceptedResponse> {
    return this.request({ method: "POST", path: "/reports", body: { claim } });
  }

  proposePlan(options?: {
    pointIds?: string[];
    dryRun?: boolean;
    edits?: WhatIfEdits;
  }): Promise<AssignmentPlan> {
    const body: Record<string, unknown> = {};
    if (options?.pointIds !== undefined) {
      body["point_ids"] = options.pointIds;
    }
    if (options?.dryRun) {
      body["dry_run"] = true;
    }
    if (options?.edits !== undefined) {
      body["edits"] = options.edits;
    }
    return this.request<{ plan: AssignmentPlan }>({
      method: "POST",
      path: "/plans",
      body,
    }).then((r) => r.plan);
  }

  getPlan(planId: string = "latest"): Promise<AssignmentPlan> {
    return this.request<{ plan: AssignmentPlan }>({
      method: "GET",
      path: `/plans/${encodeURIComponent(planId)}`,
    }).then((r) => r.plan);
  }

  dispatchPlan(planId: string, unitIds: string[]): Promise<DispatchResponse> {
    return this.request({
      method: "POST",
      path: `/plans/${encodeURIComponent(planId)}/dispatch`,
      body: { unit_ids: unitIds },
    });
  }

  submitFeedback(rating: number, text = ""): Promise<AcceptedResponse> {
    return this.request({ method: "POST", path: "/feedback", body: { rating, text } });
  }

  synthesis(seqFrom = 1, seqTo?: number): Promise<SynthesisReport> {
    return this.request({
      method: "GET",
      path: "/synthesis",
      query: { from: seqFrom, to: seqTo },
    });
  }
}
