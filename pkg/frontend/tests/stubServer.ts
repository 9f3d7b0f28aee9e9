// In-memory double of the annotation endpoints, state machine included.
//
// The queue, duplicate, and decision semantics mirror the backend: a
// candidate is served to an annotator only while its decision is pending
// and that annotator has not scored it; any score below 4 rejects; all
// `redundancy` scores >= 4 accept; a repeated submission is not recorded
// and the reply carries the standing score and decision.

import { FetchLike } from "../src/api";
import { ParitySession, ScoreEventRecord, jsonResponse } from "./helpers";

const ACCEPT_THRESHOLD = 4;

export type Decision = "accepted" | "rejected" | "pending";

export class StubAnnotationServer {
  readonly scores = new Map<string, Map<string, number>>();
  readonly events: ScoreEventRecord[] = [];
  // one-shot fault injection: next score request fails before the server
  failNextScore = false;
  // served instead of the real progress counters when set
  progressOverride: { assigned: number; scored: number } | null = null;

  constructor(
    private readonly session: ParitySession,
    private readonly guidelines: Record<string, string>,
  ) {}

  decision(candidateId: string): Decision {
    const recorded = this.scores.get(candidateId);
    const values = recorded ? [...recorded.values()] : [];
    if (values.some((score) => score < ACCEPT_THRESHOLD)) {
      return "rejected";
    }
    if (values.length < this.session.redundancy) {
      return "pending";
    }
    return "accepted";
  }

  nextFor(annotator: string): string | null {
    for (const candidateId of this.session.assignments[annotator] ?? []) {
      if (this.scores.get(candidateId)?.has(annotator)) {
        continue;
      }
      if (this.decision(candidateId) === "pending") {
        return candidateId;
      }
    }
    return null;
  }

  progress(annotator: string): { assigned: number; scored: number } {
    if (this.progressOverride) {
      return this.progressOverride;
    }
    const assigned = this.session.assignments[annotator] ?? [];
    let scored = 0;
    for (const candidateId of assigned) {
      if (this.scores.get(candidateId)?.has(annotator)) {
        scored += 1;
      }
    }
    return { assigned: assigned.length, scored };
  }

  // Record a score out of band, as if another client submitted it.
  seedScore(candidateId: string, annotator: string, score: number): void {
    let recorded = this.scores.get(candidateId);
    if (!recorded) {
      recorded = new Map();
      this.scores.set(candidateId, recorded);
    }
    recorded.set(annotator, score);
    this.events.push({ candidate: candidateId, annotator, score });
  }

  decidedIds(decision: Decision): string[] {
    return Object.keys(this.session.candidates).filter(
      (candidateId) => this.decision(candidateId) === decision,
    );
  }

  private handleNext(sessionId: string, annotator: string): Response {
    if (sessionId !== this.session.id) {
      return jsonResponse(404, {
        detail: `unknown annotation session '${sessionId}'`,
      });
    }
    if (!(annotator in this.session.assignments)) {
      return jsonResponse(404, { detail: `unknown annotator '${annotator}'` });
    }
    const candidateId = this.nextFor(annotator);
    return jsonResponse(200, {
      session: sessionId,
      annotator,
      redundancy: this.session.redundancy,
      guidelines: this.guidelines,
      progress: this.progress(annotator),
      candidate: candidateId === null ? null : this.session.candidates[candidateId],
    });
  }

  private handleScore(sessionId: string, body: unknown): Response {
    if (sessionId !== this.session.id) {
      return jsonResponse(404, {
        detail: `unknown annotation session '${sessionId}'`,
      });
    }
    const record = body as { candidate?: unknown; annotator?: unknown; score?: unknown };
    const candidateId = String(record.candidate);
    const annotator = String(record.annotator);
    const score = record.score;
    if (typeof score !== "number" || !Number.isInteger(score)) {
      return jsonResponse(400, { detail: "score must be an integer from 1 to 5" });
    }
    if (!(annotator in this.session.assignments)) {
      return jsonResponse(404, { detail: `unknown annotator '${annotator}'` });
    }
    if (!(candidateId in this.session.candidates)) {
      return jsonResponse(404, { detail: `unknown candidate '${candidateId}'` });
    }
    const existing = this.scores.get(candidateId);
    if (existing?.has(annotator)) {
      return jsonResponse(200, {
        recorded: false,
        already_scored: true,
        score: existing.get(annotator),
        decision: this.decision(candidateId),
        progress: this.progress(annotator),
      });
    }
    if (score < 1 || score > 5) {
      return jsonResponse(400, { detail: `score must be in [1, 5], got ${score}` });
    }
    this.seedScore(candidateId, annotator, score);
    return jsonResponse(200, {
      recorded: true,
      already_scored: false,
      score,
      decision: this.decision(candidateId),
      progress: this.progress(annotator),
    });
  }

  fetch: FetchLike = async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    const parsed = new URL(url, "http://stub.invalid");
    const next = /^\/api\/annotation\/([^/]+)\/next$/.exec(parsed.pathname);
    if (next && method === "GET") {
      const annotator = parsed.searchParams.get("annotator") ?? "";
      return this.handleNext(decodeURIComponent(next[1]), annotator);
    }
    const scores = /^\/api\/annotation\/([^/]+)\/scores$/.exec(parsed.pathname);
    if (scores && method === "POST") {
      if (this.failNextScore) {
        this.failNextScore = false;
        throw new TypeError("fetch failed: connection reset");
      }
      const body = init?.body ? (JSON.parse(String(init.body)) as unknown) : {};
      return this.handleScore(decodeURIComponent(scores[1]), body);
    }
    throw new TypeError(`unrouted request: ${method} ${parsed.pathname}`);
  };
}
