// Pipeline console: per-stage status cards with start/re-run actions and
// live progress from the run's event stream.
//
// Statuses and counters come from the manifest and the stream only. Server
// error strings (conflicts, unmet prerequisites) are shown verbatim. When
// the API cannot be reached the console shows a banner with a retry action
// instead of going blank.

import { ApiClient, ApiError } from "../api";
import { clear, el } from "../dom";
import { EventSourceFactory, ProgressTracker, openEventStream } from "../events";
import {
  ProgressEvent,
  RunManifest,
  STAGES,
  StageName,
  StageProgress,
  StageState,
} from "../types";

const STAGE_TITLES: Record<StageName, string> = {
  construct: "construct victims",
  generate: "generate attacks",
  curate: "curate & annotate",
  evaluate: "evaluate robustness",
};

export function statusStrip(
  stages: Record<string, StageState>,
  onOpenReport: (() => void) | null,
): HTMLElement {
  const chips = STAGES.map((stage) => {
    const status = stages[stage]?.status ?? "pending";
    return el("span", { class: `chip status-${status}`, "data-stage": stage }, [
      `${stage}: ${status}`,
    ]);
  });
  const strip = el("div", { class: "status-strip" }, chips);
  const allDone = STAGES.every((stage) => stages[stage]?.status === "done");
  if (allDone) {
    const link = el("a", { class: "report-link", href: "#evaluate" }, ["view report"]);
    if (onOpenReport) {
      link.addEventListener("click", (ev) => {
        ev.preventDefault();
        onOpenReport();
      });
    }
    strip.append(link);
  }
  return strip;
}

function summaryLines(summary: Record<string, unknown>): string[] {
  const lines: string[] = [];
  for (const [key, value] of Object.entries(summary)) {
    if (value === null || typeof value !== "object") {
      lines.push(`${key}: ${String(value)}`);
      continue;
    }
    for (const [inner, innerValue] of Object.entries(value)) {
      if (innerValue === null || typeof innerValue !== "object") {
        lines.push(`${key}.${inner}: ${String(innerValue)}`);
      }
    }
  }
  return lines;
}

export type StageCardHandlers = {
  onStart: (stage: StageName, force: boolean) => void;
};

export function stageCard(
  stage: StageName,
  state: StageState,
  progress: StageProgress | undefined,
  startError: string | null,
  busy: boolean,
  handlers: StageCardHandlers,
): HTMLElement {
  const card = el("article", { class: "stage-card", "data-stage": stage }, [
    el("header", {}, [
      el("h3", {}, [STAGE_TITLES[stage]]),
      el("span", { class: `chip status-${state.status}` }, [state.status]),
    ]),
  ]);

  if (progress) {
    const bar = el("div", { class: "progress" });
    if (progress.items_total !== null && progress.items_total > 0) {
      const done = progress.items_done ?? 0;
      const fill = el("div", { class: "progress-fill" });
      fill.style.width = `${Math.min(100, (100 * done) / progress.items_total)}%`;
      bar.append(fill);
      card.append(
        bar,
        el("p", { class: "progress-counter", "data-role": "counter" }, [
          `${done} / ${progress.items_total}`,
        ]),
      );
    }
    if (progress.message) {
      card.append(el("p", { class: "progress-message" }, [progress.message]));
    }
  }

  const lines = summaryLines(state.summary);
  if (lines.length) {
    card.append(
      el(
        "ul",
        { class: "stage-summary" },
        lines.map((line) => el("li", {}, [line])),
      ),
    );
  }

  if (state.error) {
    card.append(el("p", { class: "stage-error" }, [state.error]));
  }
  if (startError) {
    card.append(el("p", { class: "stage-error", "data-role": "start-error" }, [startError]));
  }

  const actions = el("div", { class: "stage-actions" });
  if (state.status === "pending" || state.status === "failed") {
    const button = el("button", { "data-action": "start" }, ["start"]);
    button.disabled = busy;
    button.addEventListener("click", () => handlers.onStart(stage, false));
    actions.append(button);
  } else if (state.status === "running") {
    // the executor owns a running stage; a crashed one is restartable
    const button = el("button", { "data-action": "start" }, ["resume"]);
    button.disabled = busy;
    button.addEventListener("click", () => handlers.onStart(stage, false));
    actions.append(button);
  } else {
    const button = el("button", { "data-action": "force" }, ["re-run (force)"]);
    button.disabled = busy;
    button.addEventListener("click", () => handlers.onStart(stage, true));
    actions.append(button);
  }
  card.append(actions);
  return card;
}

export type ConsoleCallbacks = {
  onManifest?: (manifest: RunManifest) => void;
  onOpenReport?: () => void;
  onStreamEvent?: (event: ProgressEvent) => void;
};

export class StageConsole {
  private tracker = new ProgressTracker();
  private manifest: RunManifest | null = null;
  private runId = "";
  private closeStream: (() => void) | null = null;
  private banner: string | null = null;
  private startErrors: Partial<Record<StageName, string>> = {};
  private busy = false;

  constructor(
    private readonly api: ApiClient,
    readonly root: HTMLElement,
    private readonly callbacks: ConsoleCallbacks = {},
    private readonly sourceFactory?: EventSourceFactory,
  ) {}

  async attach(runId: string): Promise<void> {
    this.detach();
    this.runId = runId;
    this.banner = null;
    this.startErrors = {};
    if (!runId) {
      this.render();
      return;
    }
    try {
      this.manifest = await this.api.getRun(runId);
    } catch (err) {
      this.manifest = null;
      this.banner = err instanceof Error ? err.message : String(err);
      this.render();
      return;
    }
    this.tracker = new ProgressTracker();
    this.tracker.state.stages = this.manifest.stages;
    this.subscribe();
    this.callbacks.onManifest?.(this.manifest);
    this.render();
  }

  detach(): void {
    if (this.closeStream) {
      this.closeStream();
      this.closeStream = null;
    }
  }

  private subscribe(): void {
    this.closeStream = openEventStream(
      this.api.eventsUrl(this.runId),
      {
        onSnapshot: (snapshot) => {
          this.tracker.applySnapshot(snapshot);
          this.render();
        },
        onEvent: (event) => {
          if (this.tracker.applyEvent(event)) {
            this.callbacks.onStreamEvent?.(event);
            this.render();
          }
        },
        onError: () => {
          // EventSource reconnects on its own; just surface the hiccup
          this.banner = "event stream interrupted; reconnecting";
          this.render();
        },
      },
      this.sourceFactory,
    );
  }

  async start(stage: StageName, force: boolean): Promise<void> {
    if (!this.runId || this.busy) {
      return;
    }
    this.busy = true;
    this.startErrors = {};
    this.banner = null;
    this.render();
    try {
      this.manifest = await this.api.startStage(this.runId, stage, force);
      this.tracker.state.stages = this.manifest.stages;
      this.callbacks.onManifest?.(this.manifest);
    } catch (err) {
      if (err instanceof ApiError && err.status > 0) {
        this.startErrors[stage] = err.message;
        // statuses may have changed server-side (e.g. the stage failed)
        try {
          this.manifest = await this.api.getRun(this.runId);
          this.tracker.state.stages = this.manifest.stages;
          this.callbacks.onManifest?.(this.manifest);
        } catch {
          // keep the stale manifest; the start error is already shown
        }
      } else {
        this.banner = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  retry(): void {
    void this.attach(this.runId);
  }

  render(): void {
    clear(this.root);
    if (this.banner) {
      const retryButton = el("button", { "data-action": "retry" }, ["retry"]);
      retryButton.addEventListener("click", () => this.retry());
      this.root.append(
        el("div", { class: "error-banner", "data-role": "banner" }, [
          this.banner,
          retryButton,
        ]),
      );
    }
    if (!this.manifest) {
      if (!this.banner) {
        this.root.append(
          el("p", { class: "placeholder" }, ["select or create a run"]),
        );
      }
      return;
    }
    const stages = this.tracker.state.stages;
    this.root.append(
      statusStrip(stages, this.callbacks.onOpenReport ?? null),
      el("p", { class: "run-line" }, [
        `run ${this.manifest.run_id} (created ${this.manifest.created_at})`,
      ]),
    );
    const cards = el("div", { class: "stage-cards" });
    for (const stage of STAGES) {
      const state = stages[stage] ?? {
        status: "pending" as const,
        error: null,
        started_at: null,
        finished_at: null,
        summary: {},
      };
      cards.append(
        stageCard(
          stage,
          state,
          this.tracker.state.progress[stage],
          this.startErrors[stage] ?? null,
          this.busy,
          { onStart: (name, force) => void this.start(name, force) },
        ),
      );
    }
    this.root.append(cards);
  }
}
