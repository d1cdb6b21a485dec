/**
 * Typed client for the review service.
 *
 * The whole UI goes through the five endpoints wrapped here; every decision
 * shown to the reviewer comes back from the server, never from this code.
 */

export interface PendingItem {
  sample_id: string;
  round: number;
  status: string;
  question: string;
}

export interface PendingList {
  schema_version: number;
  items: PendingItem[];
}

export interface OptionView {
  label: string;
  text: string;
}

export interface GuidelineBand {
  range: string;
  description: string;
}

export interface FrameView {
  index: number;
  timestamp: number;
  in_key_video: boolean;
  thumbnail_b64: string;
}

export interface KeyVideoFrame {
  index: number;
  timestamp: number;
  image_b64: string;
}

export interface ScoreEntry {
  reviewer_id: string;
  score: number;
}

export interface ReviewRound {
  round: number;
  spec: number[];
  scores: ScoreEntry[] | null;
  decision: string | null;
}

export interface ItemDetail {
  schema_version: number;
  sample_id: string;
  question: string;
  options: OptionView[];
  gold_answer: string;
  gold_reasoning: string | null;
  guideline: GuidelineBand[];
  round: number;
  status: string;
  current_spec: number[];
  frame_count: number;
  frames: FrameView[];
  key_video: KeyVideoFrame[];
  rounds: ReviewRound[];
}

export interface ScoresResult {
  schema_version: number;
  sample_id: string;
  round: number;
  decision: string;
  status: string;
}

export interface RevisionResult {
  schema_version: number;
  sample_id: string;
  round: number;
  spec: number[];
  status: string;
}

export interface WorkspaceStats {
  schema_version: number;
  total: number;
  pending_scores: number;
  awaiting_revision: number;
  retained: number;
  benchmark_average: number | null;
}

/** Structural subset of fetch so tests can substitute a bare transport. */
export interface RequestInitLike {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}

export interface ResponseLike {
  ok: boolean;
  status: number;
  statusText: string;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: RequestInitLike,
) => Promise<ResponseLike>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Duplicate-free ascending indices, the only selection shape the server accepts. */
export function normalizeSelection(indices: Iterable<number>): number[] {
  return [...new Set(indices)].sort((a, b) => a - b);
}

function errorDetail(payload: unknown, fallback: string): string {
  if (payload !== null && typeof payload === "object") {
    const record = payload as Record<string, unknown>;
    if (typeof record["error"] === "string") {
      return record["error"];
    }
    if ("detail" in record) {
      return JSON.stringify(record["detail"]);
    }
  }
  return fallback;
}

export class ReviewApi {
  private readonly fetchImpl: FetchLike;

  constructor(
    private readonly baseUrl = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  pending(): Promise<PendingList> {
    return this.request("GET", "/review/pending");
  }

  item(sampleId: string): Promise<ItemDetail> {
    return this.request("GET", `/review/item/${encodeURIComponent(sampleId)}`);
  }

  submitScores(
    sampleId: string,
    round: number,
    scores: ScoreEntry[],
  ): Promise<ScoresResult> {
    return this.request(
      "POST",
      `/review/item/${encodeURIComponent(sampleId)}/scores`,
      { round, scores },
    );
  }

  submitRevision(
    sampleId: string,
    frameIndices: Iterable<number>,
  ): Promise<RevisionResult> {
    return this.request(
      "POST",
      `/review/item/${encodeURIComponent(sampleId)}/revision`,
      { frame_indices: normalizeSelection(frameIndices) },
    );
  }

  stats(): Promise<WorkspaceStats> {
    return this.request("GET", "/review/stats");
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInitLike = {
      method,
      headers: { accept: "application/json" },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const payload: unknown = await response.json().catch(() => null);
    if (!response.ok) {
      throw new ApiError(
        response.status,
        errorDetail(payload, response.statusText),
      );
    }
    return payload as T;
  }
}
