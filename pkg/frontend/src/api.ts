import type {
  CasePayload,
  OverrideResponse,
  QueuePage,
  ReportRow,
  Selection,
  TagResponse,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly detail: string;

  constructor(status: number, code: string, detail: string) {
    super(`${code} (${status}): ${detail}`);
    this.status = status;
    this.code = code;
    this.detail = detail;
  }
}

export interface ClientConfig {
  baseUrl: string;
  token: string;
  fetchImpl?: typeof fetch;
}

export class ReviewApiClient {
  private readonly baseUrl: string;
  private readonly token: string;
  private readonly fetchImpl: typeof fetch;

  constructor(config: ClientConfig) {
    this.baseUrl = config.baseUrl.replace(/\/+$/, "");
    this.token = config.token;
    this.fetchImpl = config.fetchImpl ?? fetch.bind(globalThis);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(init?.body ? { "Content-Type": "application/json" } : {}),
        ...(init?.headers ?? {}),
      },
    });
    if (!response.ok) {
      let code = "http-error";
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { error?: string; detail?: unknown };
        if (body.error) code = body.error;
        if (body.detail) detail = JSON.stringify(body.detail).replace(/^"|"$/g, "");
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, code, detail);
    }
    return (await response.json()) as T;
  }

  getQueue(params?: {
    question?: string;
    model_config?: string;
    has_override?: boolean;
    limit?: number;
    cursor?: string;
  }): Promise<QueuePage> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(params ?? {})) {
      if (value !== undefined) query.set(key, String(value));
    }
    const suffix = query.toString() ? `?${query}` : "";
    return this.request<QueuePage>(`/queue${suffix}`);
  }

  getCase(submissionId: string, modelConfig?: string): Promise<CasePayload> {
    const suffix = modelConfig ? `?model_config=${encodeURIComponent(modelConfig)}` : "";
    return this.request<CasePayload>(
      `/cases/${encodeURIComponent(submissionId)}${suffix}`,
    );
  }

  postOverride(
    submissionId: string,
    graderId: string,
    selections: Selection[],
    rubricVersion?: number,
  ): Promise<OverrideResponse> {
    return this.request<OverrideResponse>(
      `/cases/${encodeURIComponent(submissionId)}/override`,
      {
        method: "POST",
        body: JSON.stringify({
          grader_id: graderId,
          selections,
          rubric_version: rubricVersion ?? null,
        }),
      },
    );
  }

  postTag(
    disagreementId: string,
    category: "TE" | "RAE",
    note: string,
    tagger: string,
  ): Promise<TagResponse> {
    return this.request<TagResponse>(
      `/disagreements/${encodeURIComponent(disagreementId)}/tag`,
      { method: "POST", body: JSON.stringify({ category, note, tagger }) },
    );
  }

  getReports(): Promise<{ rows: ReportRow[] }> {
    return this.request<{ rows: ReportRow[] }>(`/reports`);
  }

  /** Fetch an image blob with auth and return an object URL for <img src>. */
  async loadImage(path: string): Promise<string> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { Authorization: `Bearer ${this.token}` },
    });
    if (!response.ok) {
      throw new ApiError(response.status, "blob-error", response.statusText);
    }
    const blob = await response.blob();
    return URL.createObjectURL(blob);
  }
}
