// Report tab: strict-decoded evaluation report rendered field by field.
//
// Numbers are printed from the raw payload literals (see rawjson.ts), so the
// page shows exactly what the report file holds. Decode failures render an
// error view naming the offending field; a missing report (evaluate not
// done) renders an explanatory placeholder. There is no path that leaves the
// view silently blank, and nothing is recomputed client-side.

import { ApiClient, ApiError } from "../api";
import { clear, el } from "../dom";
import { RawNumber } from "../rawjson";
import { Report, decodeReport } from "../report";

function numberCell(
  tag: "td" | "dd",
  field: string,
  value: RawNumber | null,
): HTMLElement {
  if (value === null) {
    return el(tag, { "data-field": field, "data-null": "true" }, ["n/a"]);
  }
  return el(tag, { "data-field": field }, [value.raw]);
}

export function renderReport(report: Report): HTMLElement {
  const headline = el("div", { class: "report-headline" }, [
    el("div", { class: "headline-label" }, ["adversarial robustness (unweighted mean)"]),
    numberCell("dd", "adv_robust", report.adv_robust),
  ]);

  const facts = el("dl", { class: "report-facts" }, [
    el("dt", {}, ["model"]),
    el("dd", { "data-field": "model" }, [report.model]),
    el("dt", {}, ["benchmark"]),
    el("dd", { "data-field": "benchmark" }, [report.benchmark]),
    el("dt", {}, ["clean accuracy"]),
    numberCell("dd", "clean_accuracy", report.clean_accuracy),
    el("dt", {}, ["degradation"]),
    numberCell("dd", "degradation", report.degradation),
    el("dt", {}, ["weighted accuracy (auxiliary)"]),
    numberCell("dd", "weighted_accuracy_auxiliary", report.weighted_accuracy_auxiliary),
    el("dt", {}, ["generated at"]),
    el("dd", { "data-field": "generated_at" }, [report.generated_at]),
  ]);

  const header = el("tr", {}, [
    el("th", {}, ["subset"]),
    el("th", {}, ["size"]),
    el("th", {}, ["correct"]),
    el("th", {}, ["accuracy"]),
    el("th", {}, ["clean accuracy"]),
    el("th", {}, ["degradation"]),
  ]);
  const body = el("tbody", {});
  report.subsets.forEach((row, index) => {
    const prefix = `subsets[${index}]`;
    body.append(
      el("tr", {}, [
        el("td", { "data-field": `${prefix}.dataset` }, [row.dataset]),
        el("td", { "data-field": `${prefix}.size` }, [String(row.size)]),
        el("td", { "data-field": `${prefix}.correct` }, [String(row.correct)]),
        numberCell("td", `${prefix}.accuracy`, row.accuracy),
        numberCell("td", `${prefix}.clean_accuracy`, row.clean_accuracy),
        numberCell("td", `${prefix}.degradation`, row.degradation),
      ]),
    );
  });
  const table = el("table", { class: "report-table" }, [
    el("thead", {}, [header]),
    body,
  ]);

  const provenance = el("details", { class: "report-provenance" }, [
    el("summary", {}, ["provenance"]),
    el("pre", { "data-field": "provenance" }, [
      JSON.stringify(report.provenance, null, 2),
    ]),
  ]);

  return el("section", { class: "report-view", "data-state": "loaded" }, [
    headline,
    facts,
    table,
    provenance,
  ]);
}

export class ReportView {
  constructor(
    private readonly api: ApiClient,
    readonly root: HTMLElement,
  ) {}

  async load(runId: string): Promise<void> {
    clear(this.root);
    if (!runId) {
      this.root.append(
        el("p", { class: "placeholder", "data-state": "placeholder" }, [
          "select a run to view its report",
        ]),
      );
      return;
    }
    let text: string;
    try {
      text = await this.api.reportText(runId);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.root.append(
          el("p", { class: "placeholder", "data-state": "placeholder" }, [
            err.message,
          ]),
        );
      } else {
        this.root.append(
          el("p", { class: "error-banner", "data-state": "error" }, [
            err instanceof Error ? err.message : String(err),
          ]),
        );
      }
      return;
    }
    let report: Report;
    try {
      report = decodeReport(text);
    } catch (err) {
      this.root.append(
        el("div", { class: "error-banner", "data-state": "decode-error" }, [
          el("strong", {}, ["report payload failed validation"]),
          el("p", {}, [err instanceof Error ? err.message : String(err)]),
        ]),
      );
      return;
    }
    this.root.append(renderReport(report));
  }
}
