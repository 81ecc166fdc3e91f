import type {
  BatchResponse,
  CreateSessionBody,
  Label,
  ResultsResponse,
  SessionStatus,
} from "./types.js";

/** Service error with the HTTP status and whatever detail the body carried. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : `service returned ${status}`);
    this.name = "ApiError";
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail = (body as { error?: unknown }).error ?? body;
    throw new ApiError(resp.status, detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async createSession(body: CreateSessionBody): Promise<{ session_id: string; status: SessionStatus }> {
    const resp = await fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson(resp);
  }

  async status(sessionId: string): Promise<SessionStatus> {
    return asJson(await fetch(this.url(`/sessions/${sessionId}`)));
  }

  async batch(sessionId: string): Promise<BatchResponse> {
    return asJson(await fetch(this.url(`/sessions/${sessionId}/batch`)));
  }

  async submitLabels(
    sessionId: string,
    labels: { tile_id: number; label: Label }[],
  ): Promise<SessionStatus> {
    const resp = await fetch(this.url(`/sessions/${sessionId}/labels`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(labels),
    });
    return asJson(resp);
  }

  async results(sessionId: string): Promise<ResultsResponse> {
    return asJson(await fetch(this.url(`/sessions/${sessionId}/results`)));
  }
}
