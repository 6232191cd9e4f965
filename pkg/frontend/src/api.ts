/**
 * Typed HTTP client for the annotation backend.
 *
 * Thin wrapper over fetch: every method maps one endpoint, JSON in/out.
 * The fetch implementation is injectable so tests can fake the network or
 * hand in node's fetch.
 */

export interface SpanRef {
  start: number;
  end: number;
}

export interface DocumentPayload {
  doc_id: string;
  tokens: string[];
  sentence_starts: number[];
}

export interface QueryPayload {
  session_id: string;
  position: number;
  total: number;
  document: DocumentPayload;
  query: SpanRef;
  candidates: SpanRef[];
}

export interface SessionInfo {
  session_id: string;
  annotator_id: string;
  mode: string;
  queue_length: number;
  started_at: string;
}

export interface SessionStats {
  session_id: string;
  n_labels: number;
  labels_first_25_minutes: number;
  inter_arrival_seconds: number[];
  document_switches: number;
  started_at: string;
  queue_length: number;
  remaining: number;
}

export type VerdictKind = "antecedent" | "no_prior_antecedent" | "not_a_mention";

export interface Verdict {
  kind: VerdictKind;
  antecedent?: (SpanRef & { doc_id: string }) | null;
}

export interface SubmitOutcome {
  status: number;
  body: Record<string, unknown>;
}

export interface SessionRequest {
  annotator_id?: string;
  mode?: "few_docs" | "many_docs" | "custom";
  k?: number;
  m?: number;
  k_per_doc?: number;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    // Bind so a bare globalThis.fetch keeps its receiver.
    const impl = fetchImpl ?? globalThis.fetch;
    if (!impl) throw new Error("no fetch implementation available");
    this.fetchImpl = (url, init) => impl(url, init);
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path);
    if (!resp.ok) {
      throw new ApiError(resp.status, `GET ${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, `POST ${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string; schema_version: number; version: string }> {
    return this.getJson("/health");
  }

  createSession(request: SessionRequest): Promise<SessionInfo> {
    return this.postJson("/session", request);
  }

  /** Head of the queue, or null when the session's queue is exhausted. */
  async nextQuery(sessionId: string): Promise<QueryPayload | null> {
    const resp = await this.fetchImpl(`${this.baseUrl}/session/${sessionId}/next`);
    if (resp.status === 204) return null;
    if (!resp.ok) {
      throw new ApiError(resp.status, `next query failed: ${resp.status}`);
    }
    return (await resp.json()) as QueryPayload;
  }

  /**
   * Submit one verdict. Rejections (409 out-of-order or conflict, 422
   * invalid) are part of the protocol, so they come back as an outcome
   * rather than a thrown error.
   */
  async submitLabel(
    sessionId: string,
    query: SpanRef & { doc_id: string },
    verdict: Verdict,
  ): Promise<SubmitOutcome> {
    const resp = await this.fetchImpl(`${this.baseUrl}/session/${sessionId}/label`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query, verdict }),
    });
    const body = (await resp.json().catch(() => ({}))) as Record<string, unknown>;
    return { status: resp.status, body };
  }

  stats(sessionId: string): Promise<SessionStats> {
    return this.getJson(`/session/${sessionId}/stats`);
  }

  document(docId: string): Promise<DocumentPayload> {
    return this.getJson(`/document/${docId}`);
  }

  advanceCycle(): Promise<{ status: string; cycle: number }> {
    return this.postJson("/cycle/advance", {});
  }

  cycleStatus(): Promise<{ training: boolean; cycle: number; n_labels: number }> {
    return this.getJson("/cycle/status");
  }
}
