// Shared test plumbing: routed fetch stubs, a scriptable event source,
// DOM polling, and fixture types.

import { FetchLike } from "../src/api";
import { EventSourceLike } from "../src/events";
import { Candidate } from "../src/types";

export class FakeEventSource implements EventSourceLike {
  onmessage: ((ev: MessageEvent) => void) | null = null;
  onerror: ((ev: Event) => void) | null = null;
  closed = false;

  emit(payload: unknown): void {
    const data = typeof payload === "string" ? payload : JSON.stringify(payload);
    this.onmessage?.(new MessageEvent("message", { data }));
  }

  fail(): void {
    this.onerror?.(new Event("error"));
  }

  close(): void {
    this.closed = true;
  }
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export function rawResponse(status: number, text: string): Response {
  return new Response(text, {
    status,
    headers: { "content-type": "application/json" },
  });
}

// A route returns a Response, or null to simulate an unreachable server
// (the client maps the rejection to ApiError status 0).
export type Route = (method: string, url: URL, body: unknown) => Response | null;

export function routedFetch(route: Route): FetchLike {
  return async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    const parsed = new URL(url, "http://stub.invalid");
    const body = init?.body ? (JSON.parse(String(init.body)) as unknown) : null;
    const response = route(method, parsed, body);
    if (response === null) {
      throw new TypeError("fetch failed: connection refused");
    }
    return response;
  };
}

// Poll until the condition holds; the views re-render after awaited fetches,
// so tests wait on the DOM instead of racing the microtask queue.
export async function until(
  cond: () => boolean,
  what = "condition",
): Promise<void> {
  for (let i = 0; i < 1000; i += 1) {
    if (cond()) {
      return;
    }
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
  throw new Error(`timed out waiting for ${what}`);
}

export function text(root: ParentNode, selector: string): string {
  const node = root.querySelector(selector);
  if (!node) {
    throw new Error(`no element matches ${selector}`);
  }
  return node.textContent ?? "";
}

// --- fixture shapes (produced by tests/fixtures/generate.py) ---

export type ScoreEventRecord = {
  candidate: string;
  annotator: string;
  score: number;
};

export type ParitySession = {
  id: string;
  redundancy: number;
  annotators: string[];
  assignments: Record<string, string[]>;
  candidates: Record<string, Candidate>;
};

export type ParityFixture = {
  session: ParitySession;
  guidelines: Record<string, string>;
  sim: { seed: number; r5: number; r4: number; jitter_p: number };
  scores: Record<string, Record<string, number>>;
  score_events: ScoreEventRecord[];
  served_order: Record<string, string[]>;
  accepted_ids: string[];
  rejected_ids: string[];
  skipped_ids: string[];
  templates: {
    next: Record<string, unknown>;
    score_ok: Record<string, unknown>;
    score_duplicate: Record<string, unknown>;
  };
};

export type ExpectedField =
  | { kind: "text"; value: string }
  | { kind: "literal"; value: string }
  | { kind: "null" };

export type ReportExpectations = { fields: Record<string, ExpectedField> };
