// Thin typed client for the run-orchestration HTTP API. All methods raise
// ApiError; server-sent detail strings are carried through verbatim so the
// views can surface them unchanged.

import {
  AnnotationNext,
  HealthReply,
  RunManifest,
  RunSummary,
  ScoreReply,
  StageName,
} from "./types";

export class ApiError extends Error {
  readonly status: number;
  readonly detail: unknown;

  // status 0 means the request never reached the server
  constructor(status: number, message: string, detail: unknown = null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

function detailMessage(detail: unknown, fallback: string): string {
  if (typeof detail === "string") {
    return detail;
  }
  if (detail !== null && typeof detail === "object" && "message" in detail) {
    const message = (detail as { message: unknown }).message;
    if (typeof message === "string") {
      return message;
    }
  }
  return fallback;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly token: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) {
      headers["content-type"] = "application/json";
    }
    if (this.token) {
      headers["x-api-token"] = this.token;
    }
    return headers;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `API unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail: unknown = null;
      try {
        detail = (await response.json()).detail;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(
        response.status,
        detailMessage(detail, `HTTP ${response.status}`),
        detail,
      );
    }
    return response;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.request(path, { headers: this.headers(false) });
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await this.request(path, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(body),
    });
    return (await response.json()) as T;
  }

  health(): Promise<HealthReply> {
    return this.getJson("/api/health");
  }

  listRuns(): Promise<RunSummary[]> {
    return this.getJson("/api/runs");
  }

  getRun(runId: string): Promise<RunManifest> {
    return this.getJson(`/api/runs/${encodeURIComponent(runId)}`);
  }

  createRun(config: Record<string, unknown>): Promise<RunManifest> {
    return this.postJson("/api/runs", config);
  }

  startStage(runId: string, stage: StageName, force = false): Promise<RunManifest> {
    const path = `/api/runs/${encodeURIComponent(runId)}/stages/${stage}`;
    return this.postJson(path, force ? { force: true } : {});
  }

  // Raw response text: the report view renders the server's own number
  // literals, so it needs the bytes, not a JSON.parse round-trip.
  async reportText(runId: string): Promise<string> {
    const response = await this.request(
      `/api/runs/${encodeURIComponent(runId)}/report`,
      { headers: this.headers(false) },
    );
    return response.text();
  }

  eventsUrl(runId: string): string {
    return `${this.baseUrl}/api/runs/${encodeURIComponent(runId)}/events`;
  }

  annotationNext(sessionId: string, annotator: string): Promise<AnnotationNext> {
    const query = `annotator=${encodeURIComponent(annotator)}`;
    return this.getJson(
      `/api/annotation/${encodeURIComponent(sessionId)}/next?${query}`,
    );
  }

  submitScore(
    sessionId: string,
    candidate: string,
    annotator: string,
    score: number,
  ): Promise<ScoreReply> {
    return this.postJson(
      `/api/annotation/${encodeURIComponent(sessionId)}/scores`,
      { candidate, annotator, score },
    );
  }
}
