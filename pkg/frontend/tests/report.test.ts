// Report view: every rendered field must match the served JSON exactly,
// byte-for-byte for numbers, and every failure mode has a visible state.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { DecodeError } from "../src/rawjson";
import { decodeReport } from "../src/report";
import { ReportView, renderReport } from "../src/views/report";
import { ExpectedField, ReportExpectations, jsonResponse, rawResponse, routedFetch, text } from "./helpers";
import consoleFixture from "./fixtures/console.json";
import expectedFixture from "./fixtures/report-expected.json";
import reportRaw from "./fixtures/report.json?raw";

const expected = (expectedFixture as ReportExpectations).fields;

function reportClient(status: number, body: string): ApiClient {
  return new ApiClient(
    "",
    "",
    routedFetch((method, url) => {
      if (method === "GET" && /\/report$/.test(url.pathname)) {
        return rawResponse(status, body);
      }
      return null;
    }),
  );
}

function assertField(root: ParentNode, field: string, expectation: ExpectedField): void {
  const cell = root.querySelector(`[data-field="${field}"]`);
  expect(cell, `cell for ${field}`).not.toBeNull();
  if (expectation.kind === "null") {
    expect(cell!.getAttribute("data-null")).toBe("true");
    expect(cell!.textContent).toBe("n/a");
  } else {
    expect(cell!.textContent, field).toBe(expectation.value);
  }
}

describe("renderReport", () => {
  it("renders every served field verbatim, number literals included", () => {
    const view = renderReport(decodeReport(reportRaw));
    for (const [field, expectation] of Object.entries(expected)) {
      assertField(view, field, expectation);
    }
  });

  it("shows payload numbers untouched even when they are inconsistent", () => {
    // adv_robust deliberately disagrees with the subset accuracies, and the
    // literals ("1.0", "0.50") are ones JS serialization would rewrite: the
    // view must not recompute or reformat anything
    const doctored = `{
      "model": "m", "benchmark": "b",
      "subsets": [{"dataset": "d1", "size": 10, "correct": 5,
                   "accuracy": 0.5, "clean_accuracy": 1.0, "degradation": 0.50}],
      "adv_robust": 0.12300, "clean_accuracy": null, "degradation": null,
      "weighted_accuracy_auxiliary": 0.5, "provenance": {},
      "generated_at": "2026-01-01T00:00:00Z"
    }`;
    const view = renderReport(decodeReport(doctored));
    expect(text(view, '[data-field="adv_robust"]')).toBe("0.12300");
    expect(text(view, '[data-field="subsets[0].clean_accuracy"]')).toBe("1.0");
    expect(text(view, '[data-field="subsets[0].degradation"]')).toBe("0.50");
    const cleanCell = view.querySelector('[data-field="clean_accuracy"]');
    expect(cleanCell!.getAttribute("data-null")).toBe("true");
    expect(cleanCell!.textContent).toBe("n/a");
    expect(text(view, '[data-field="degradation"]')).toBe("n/a");
  });
});

describe("decodeReport", () => {
  it("decodes the fixture payload", () => {
    const report = decodeReport(reportRaw);
    expect(report.subsets.length).toBeGreaterThanOrEqual(2);
    expect(report.adv_robust.raw).toBe(
      (expected["adv_robust"] as { value: string }).value,
    );
  });

  it("fails loudly, naming the path, when a field is renamed", () => {
    const mutated = JSON.parse(reportRaw) as Record<string, unknown>;
    mutated["weighted_accuracy"] = mutated["weighted_accuracy_auxiliary"];
    delete mutated["weighted_accuracy_auxiliary"];
    try {
      decodeReport(JSON.stringify(mutated));
      expect.unreachable("decode should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(DecodeError);
      expect((err as DecodeError).message).toContain(
        "report.weighted_accuracy_auxiliary",
      );
    }
  });

  it("names the subset path when a subset field is retyped", () => {
    const mutated = JSON.parse(reportRaw) as { subsets: Record<string, unknown>[] };
    mutated.subsets[1]["accuracy"] = "0.5";
    expect(() => decodeReport(JSON.stringify(mutated))).toThrow(
      /report\.subsets\[1\]\.accuracy/,
    );
  });

  it("rejects non-JSON payloads", () => {
    expect(() => decodeReport("<html>oops</html>")).toThrow(DecodeError);
  });
});

describe("ReportView", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "";
    root = document.createElement("div");
    document.body.append(root);
  });

  it("loads and renders the served bytes field-for-field", async () => {
    const view = new ReportView(reportClient(200, reportRaw), root);
    await view.load("run-1");
    expect(root.querySelector('[data-state="loaded"]')).not.toBeNull();
    for (const [field, expectation] of Object.entries(expected)) {
      assertField(root, field, expectation);
    }
  });

  it("shows the server's explanation when the report does not exist yet", async () => {
    const detail = (consoleFixture as { report_missing: { detail: string } })
      .report_missing.detail;
    const view = new ReportView(
      new ApiClient("", "", routedFetch(() => jsonResponse(404, { detail }))),
      root,
    );
    await view.load("run-2");
    const placeholder = root.querySelector('[data-state="placeholder"]');
    expect(placeholder).not.toBeNull();
    expect(placeholder!.textContent).toBe(detail);
  });

  it("shows a validation error view instead of a blank page on decode failure", async () => {
    const mutated = JSON.parse(reportRaw) as Record<string, unknown>;
    mutated["adv_robustness"] = mutated["adv_robust"];
    delete mutated["adv_robust"];
    const view = new ReportView(reportClient(200, JSON.stringify(mutated)), root);
    await view.load("run-1");
    const error = root.querySelector('[data-state="decode-error"]');
    expect(error).not.toBeNull();
    expect(error!.textContent).toContain("report payload failed validation");
    expect(error!.textContent).toContain("report.adv_robust");
  });

  it("shows an error banner when the API is unreachable", async () => {
    const view = new ReportView(
      new ApiClient("", "", routedFetch(() => null)),
      root,
    );
    await view.load("run-1");
    const banner = root.querySelector('[data-state="error"]');
    expect(banner).not.toBeNull();
    expect(banner!.textContent).toContain("API unreachable");
  });

  it("asks for a run when none is selected", async () => {
    const view = new ReportView(reportClient(200, reportRaw), root);
    await view.load("");
    expect(text(root, '[data-state="placeholder"]')).toBe(
      "select a run to view its report",
    );
  });
});
