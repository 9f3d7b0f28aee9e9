// Annotation tab: fetch-next / score loop against the annotation endpoints.
//
// The server decides everything: which pair comes next, whether a score was
// recorded, and the standing decision. This view renders payloads verbatim
// (texts are never normalized or diffed), submits exactly one integer score
// per pair, disables the controls the moment one is chosen, and surfaces the
// server's verdict on duplicate submissions before advancing. Submission
// failures keep the chosen score and offer an idempotent retry.
//
// Attack provenance (method, dataset, model predictions) can bias a human
// judge, so it hides behind a toggle that defaults to off.

import { ApiClient } from "../api";
import { clear, el } from "../dom";
import { highlightCandidate } from "../highlight";
import { AnnotationNext, Candidate, ScoreReply } from "../types";

const SCORES = [1, 2, 3, 4, 5];

function textBlock(label: string, role: string, candidate: Candidate): HTMLElement {
  const result = highlightCandidate(candidate);
  const block = el("div", { class: "text-block" }, [el("h4", {}, [label])]);
  if (result.kind === "units") {
    const segments = role === "original" ? result.original : result.adversarial;
    const body = el("p", { class: "candidate-text", "data-role": role });
    for (const segment of segments) {
      if (segment.changed) {
        body.append(el("mark", { class: "substituted" }, [segment.text]));
      } else {
        body.append(document.createTextNode(segment.text));
      }
    }
    block.append(body);
    return block;
  }
  // misaligned record: show the verbatim text, never a guessed highlight
  const text =
    role === "original" ? candidate.original_text : candidate.adversarial_text;
  block.append(el("p", { class: "candidate-text", "data-role": role }, [text]));
  if (role === "adversarial") {
    block.append(
      el("p", { class: "fallback-note", "data-role": "fallback" }, [result.reason]),
      el(
        "ul",
        { class: "substitution-list" },
        candidate.substituted_positions.map(([position, oldUnit, newUnit]) =>
          el("li", {}, [`unit ${position}: ${oldUnit} → ${newUnit}`]),
        ),
      ),
    );
  }
  return block;
}

function guidelineList(guidelines: Record<string, string>): HTMLElement {
  const entries = Object.entries(guidelines).sort(
    (a, b) => Number(a[0]) - Number(b[0]),
  );
  return el(
    "ol",
    { class: "guidelines" },
    entries.map(([score, text]) =>
      el("li", { value: score, "data-score": score }, [text]),
    ),
  );
}

function provenanceBlock(candidate: Candidate): HTMLElement {
  const rows: (string | HTMLElement)[] = [];
  const push = (term: string, value: string) => {
    rows.push(el("dt", {}, [term]), el("dd", {}, [value]));
  };
  push("attack", candidate.attack);
  push("dataset", candidate.dataset);
  push("gold label", candidate.gold_label);
  push("prediction (original)", candidate.orig_pred);
  push("prediction (adversarial)", candidate.adv_pred);
  for (const [name, value] of Object.entries(candidate.metrics)) {
    push(name, String(value));
  }
  if (candidate.note) {
    push("note", candidate.note);
  }
  return el("dl", { class: "provenance", "data-role": "provenance" }, rows);
}

type Verdict = {
  candidateId: string;
  reply: ScoreReply;
};

export class AnnotationFlow {
  private sessionId = "";
  private annotator = "";
  private current: AnnotationNext | null = null;
  private verdict: Verdict | null = null;
  private error: string | null = null;
  private pendingScore: number | null = null;
  private submitting = false;
  private showProvenance = false;

  constructor(
    private readonly api: ApiClient,
    readonly root: HTMLElement,
  ) {
    this.renderForm();
  }

  async begin(sessionId: string, annotator: string): Promise<void> {
    this.sessionId = sessionId.trim();
    this.annotator = annotator.trim();
    this.current = null;
    this.verdict = null;
    this.error = null;
    if (!this.sessionId || !this.annotator) {
      this.error = "session id and annotator name are both required";
      this.renderForm();
      return;
    }
    await this.fetchNext();
  }

  private async fetchNext(): Promise<void> {
    try {
      this.current = await this.api.annotationNext(this.sessionId, this.annotator);
      this.error = null;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
      this.current = null;
      this.renderForm();
      return;
    }
    this.pendingScore = null;
    this.render();
  }

  private async submit(score: number): Promise<void> {
    if (this.submitting || !this.current?.candidate) {
      return;
    }
    const candidateId = this.current.candidate.id;
    this.submitting = true;
    this.pendingScore = score;
    this.render();
    let reply: ScoreReply;
    try {
      reply = await this.api.submitScore(
        this.sessionId,
        candidateId,
        this.annotator,
        score,
      );
    } catch (err) {
      // score submission is at-most-once server-side, so retrying is safe
      this.submitting = false;
      this.error = err instanceof Error ? err.message : String(err);
      this.render();
      return;
    }
    this.submitting = false;
    this.error = null;
    this.verdict = { candidateId, reply };
    await this.fetchNext();
  }

  private renderForm(): void {
    clear(this.root);
    const sessionInput = el("input", {
      type: "text",
      placeholder: "annotation session id",
      "data-role": "session-input",
    });
    sessionInput.value = this.sessionId;
    const annotatorInput = el("input", {
      type: "text",
      placeholder: "annotator name",
      "data-role": "annotator-input",
    });
    annotatorInput.value = this.annotator;
    const startButton = el("button", { "data-action": "begin" }, ["start scoring"]);
    startButton.addEventListener("click", () => {
      void this.begin(sessionInput.value, annotatorInput.value);
    });
    const form = el("div", { class: "annotation-form" }, [
      el("p", {}, [
        "enter the session id from the curate stage and your annotator name",
      ]),
      sessionInput,
      annotatorInput,
      startButton,
    ]);
    if (this.error) {
      form.append(el("p", { class: "stage-error", "data-role": "error" }, [this.error]));
    }
    this.root.append(form);
  }

  private verdictLine(): HTMLElement | null {
    if (!this.verdict) {
      return null;
    }
    const { candidateId, reply } = this.verdict;
    const text = reply.recorded
      ? `recorded score ${reply.score} for ${candidateId}; decision: ${reply.decision}`
      : `pair ${candidateId} was already scored; the server kept score ` +
        `${reply.score}; decision: ${reply.decision}`;
    return el("p", { class: "verdict", "data-role": "verdict" }, [text]);
  }

  render(): void {
    clear(this.root);
    if (!this.current) {
      this.renderForm();
      return;
    }
    const { progress, candidate, guidelines } = this.current;
    const header = el("div", { class: "annotation-header" }, [
      el("span", {}, [`session ${this.current.session}`]),
      el("span", {}, [`annotator ${this.current.annotator}`]),
      el("span", { "data-role": "progress" }, [
        `${progress.scored} / ${progress.assigned} scored`,
      ]),
    ]);
    this.root.append(header);
    const verdict = this.verdictLine();
    if (verdict) {
      this.root.append(verdict);
    }

    if (candidate === null) {
      this.root.append(
        el("div", { class: "completion", "data-role": "completion" }, [
          el("h3", {}, ["all assigned pairs are scored"]),
          el("p", {}, [
            `you scored ${progress.scored} of ${progress.assigned} assigned pairs; ` +
              "remaining pairs were decided without your score",
          ]),
        ]),
      );
      return;
    }

    this.root.append(
      el("p", { class: "candidate-id", "data-role": "candidate-id" }, [candidate.id]),
      textBlock("original", "original", candidate),
      textBlock("adversarial", "adversarial", candidate),
    );

    const toggle = el("input", { type: "checkbox", "data-role": "provenance-toggle" });
    toggle.checked = this.showProvenance;
    toggle.addEventListener("change", () => {
      this.showProvenance = toggle.checked;
      this.render();
    });
    this.root.append(
      el("label", { class: "provenance-toggle" }, [
        toggle,
        " show attack provenance",
      ]),
    );
    if (this.showProvenance) {
      this.root.append(provenanceBlock(candidate));
    }

    this.root.append(
      el("h4", {}, ["guidelines"]),
      guidelineList(guidelines),
    );

    const buttons = el("div", { class: "score-buttons", "data-role": "scores" });
    for (const score of SCORES) {
      const button = el("button", { "data-score": String(score) }, [String(score)]);
      button.disabled = this.submitting || this.pendingScore !== null;
      button.addEventListener("click", () => void this.submit(score));
      buttons.append(button);
    }
    this.root.append(buttons);

    if (this.error) {
      const retryButton = el("button", { "data-action": "retry-submit" }, [
        "retry submission",
      ]);
      retryButton.addEventListener("click", () => {
        if (this.pendingScore !== null) {
          this.error = null;
          // re-send the same score; the server records it at most once
          void this.submit(this.pendingScore);
        }
      });
      this.root.append(
        el("div", { class: "error-banner", "data-role": "submit-error" }, [
          this.error,
          retryButton,
        ]),
      );
    }
  }
}
