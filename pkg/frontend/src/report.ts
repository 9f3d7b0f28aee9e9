// Strict decoding of the evaluation report payload.
//
// Every field the view shows is decoded here by exact name; a renamed or
// missing field raises DecodeError instead of rendering a blank. Numeric
// fields keep their raw serialized literal so the view can display the
// payload bytes untouched.

import {
  DecodeError,
  RawNumber,
  asArray,
  asInteger,
  asNullableNumber,
  asNumber,
  asObject,
  asString,
  parseRawJson,
  required,
  toPlain,
} from "./rawjson";

export type SubsetRow = {
  dataset: string;
  size: number;
  correct: number;
  accuracy: RawNumber;
  clean_accuracy: RawNumber | null;
  degradation: RawNumber | null;
};

export type Report = {
  model: string;
  benchmark: string;
  subsets: SubsetRow[];
  adv_robust: RawNumber;
  clean_accuracy: RawNumber | null;
  degradation: RawNumber | null;
  weighted_accuracy_auxiliary: RawNumber;
  provenance: unknown;
  generated_at: string;
};

export function decodeReport(text: string): Report {
  let root;
  try {
    root = parseRawJson(text);
  } catch (err) {
    throw new DecodeError("report", `payload is not valid JSON (${String(err)})`);
  }
  const top = asObject(root, "report");

  const subsets: SubsetRow[] = [];
  const subsetNodes = asArray(required(top, "subsets", "report"), "report.subsets");
  subsetNodes.forEach((node, index) => {
    const path = `report.subsets[${index}]`;
    const entries = asObject(node, path);
    subsets.push({
      dataset: asString(required(entries, "dataset", path), `${path}.dataset`),
      size: asInteger(required(entries, "size", path), `${path}.size`),
      correct: asInteger(required(entries, "correct", path), `${path}.correct`),
      accuracy: asNumber(required(entries, "accuracy", path), `${path}.accuracy`),
      clean_accuracy: asNullableNumber(
        required(entries, "clean_accuracy", path),
        `${path}.clean_accuracy`,
      ),
      degradation: asNullableNumber(
        required(entries, "degradation", path),
        `${path}.degradation`,
      ),
    });
  });

  return {
    model: asString(required(top, "model", "report"), "report.model"),
    benchmark: asString(required(top, "benchmark", "report"), "report.benchmark"),
    subsets,
    adv_robust: asNumber(required(top, "adv_robust", "report"), "report.adv_robust"),
    clean_accuracy: asNullableNumber(
      required(top, "clean_accuracy", "report"),
      "report.clean_accuracy",
    ),
    degradation: asNullableNumber(
      required(top, "degradation", "report"),
      "report.degradation",
    ),
    weighted_accuracy_auxiliary: asNumber(
      required(top, "weighted_accuracy_auxiliary", "report"),
      "report.weighted_accuracy_auxiliary",
    ),
    provenance: toPlain(required(top, "provenance", "report")),
    generated_at: asString(
      required(top, "generated_at", "report"),
      "report.generated_at",
    ),
  };
}
