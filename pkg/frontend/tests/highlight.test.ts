// Substituted-unit highlighting: marks must come from the candidate's own
// substitution record, reproduce the texts byte-for-byte, and fall back to
// verbatim text rather than ever guessing a span.

import { describe, expect, it } from "vitest";

import {
  SHAD,
  TSHEG,
  highlightCandidate,
  joinSegments,
  splitUnits,
} from "../src/highlight";
import { Candidate, Substitution } from "../src/types";
import highlightFixture from "./fixtures/highlight.json";

const fixtureCandidates = (
  highlightFixture as unknown as { candidates: Candidate[] }
).candidates;

function makeCandidate(
  original: string,
  adversarial: string,
  substitutions: Substitution[],
): Candidate {
  return {
    id: "cand-test",
    dataset: "d",
    attack: "embedding",
    original_text: original,
    adversarial_text: adversarial,
    gold_label: "a",
    orig_pred: "a",
    adv_pred: "b",
    status: "success",
    substituted_positions: substitutions,
    query_count: 1,
    edit_distance: 1,
    metrics: {},
    note: "",
  };
}

describe("splitUnits", () => {
  it("brackets units with separators that reproduce the text", () => {
    const text = `${TSHEG}ka${TSHEG}kha${SHAD}${SHAD}ga${TSHEG}`;
    const split = splitUnits(text, new Set([TSHEG, SHAD]), false);
    expect(split.units).toEqual(["ka", "kha", "ga"]);
    expect(split.separators.length).toBe(split.units.length + 1);
    let rebuilt = split.separators[0];
    split.units.forEach((unit, i) => {
      rebuilt += unit + split.separators[i + 1];
    });
    expect(rebuilt).toBe(text);
  });

  it("collapses delimiter runs and never yields empty units", () => {
    const split = splitUnits(`a${TSHEG}${TSHEG}${TSHEG}b`, new Set([TSHEG]), false);
    expect(split.units).toEqual(["a", "b"]);
    expect(split.separators).toEqual(["", `${TSHEG}${TSHEG}${TSHEG}`, ""]);
  });

  it("treats whitespace as a separator only when asked", () => {
    const narrow = splitUnits("ab cd", new Set([TSHEG]), false);
    expect(narrow.units).toEqual(["ab cd"]);
    const wide = splitUnits("ab cd", new Set([TSHEG]), true);
    expect(wide.units).toEqual(["ab", "cd"]);
  });
});

describe("highlightCandidate on recorded benchmark candidates", () => {
  for (const candidate of fixtureCandidates) {
    it(`marks exactly the recorded units of ${candidate.id}`, () => {
      const result = highlightCandidate(candidate);
      expect(result.kind).toBe("units");
      if (result.kind !== "units") {
        return;
      }
      // segments reproduce both texts byte-for-byte
      expect(joinSegments(result.original)).toBe(candidate.original_text);
      expect(joinSegments(result.adversarial)).toBe(candidate.adversarial_text);
      // the changed segments are exactly the recorded (position, old, new)
      const changedOld = new Map(
        result.original
          .filter((segment) => segment.changed)
          .map((segment) => [segment.unit, segment.text]),
      );
      const changedNew = new Map(
        result.adversarial
          .filter((segment) => segment.changed)
          .map((segment) => [segment.unit, segment.text]),
      );
      expect(changedOld.size).toBe(candidate.substituted_positions.length);
      expect(changedNew.size).toBe(candidate.substituted_positions.length);
      for (const [position, oldUnit, newUnit] of candidate.substituted_positions) {
        expect(changedOld.get(position)).toBe(oldUnit);
        expect(changedNew.get(position)).toBe(newUnit);
      }
    });
  }
});

describe("highlightCandidate fallback", () => {
  const base = fixtureCandidates[0];

  it("falls back when a recorded position is out of range", () => {
    const [position, oldUnit, newUnit] = base.substituted_positions[0];
    const corrupted = makeCandidate(base.original_text, base.adversarial_text, [
      [position + 1000, oldUnit, newUnit],
    ]);
    expect(highlightCandidate(corrupted).kind).toBe("fallback");
  });

  it("falls back when the recorded old unit does not match the text", () => {
    const [position, , newUnit] = base.substituted_positions[0];
    const corrupted = makeCandidate(base.original_text, base.adversarial_text, [
      [position, "not-the-unit", newUnit],
    ]);
    const result = highlightCandidate(corrupted);
    expect(result.kind).toBe("fallback");
    if (result.kind === "fallback") {
      expect(result.reason).toContain("do not align");
    }
  });

  it("falls back when an unrecorded unit differs between the texts", () => {
    // an extra unnoted change elsewhere must poison the whole highlight
    const doctored = makeCandidate(
      `ka${TSHEG}kha${TSHEG}ga`,
      `XX${TSHEG}kha${TSHEG}YY`,
      [[0, "ka", "XX"]],
    );
    expect(highlightCandidate(doctored).kind).toBe("fallback");
  });

  it("tries word granularity when syllable units do not align", () => {
    const candidate = makeCandidate(
      `ab cd${TSHEG}ef`,
      `ab xx${TSHEG}ef`,
      [[1, "cd", "xx"]],
    );
    const result = highlightCandidate(candidate);
    expect(result.kind).toBe("units");
    if (result.kind === "units") {
      const changed = result.adversarial.filter((segment) => segment.changed);
      expect(changed).toEqual([{ text: "xx", unit: 1, changed: true }]);
    }
  });
});

describe("no client-side normalization", () => {
  // "é" precomposed (U+00E9) versus decomposed "é": NFC-equal, but the
  // payload bytes differ and the view must treat them as different strings
  const COMPOSED = "é";
  const DECOMPOSED = "é";

  it("compares recorded units by code units, not normalized forms", () => {
    const candidate = makeCandidate(
      `${DECOMPOSED}${TSHEG}ka`,
      `${COMPOSED}${TSHEG}ka`,
      [[0, DECOMPOSED, COMPOSED]],
    );
    const result = highlightCandidate(candidate);
    expect(result.kind).toBe("units");
    if (result.kind === "units") {
      // the rendered strings carry the exact payload code points
      expect(joinSegments(result.original)).toBe(`${DECOMPOSED}${TSHEG}ka`);
      expect(joinSegments(result.adversarial)).toBe(`${COMPOSED}${TSHEG}ka`);
      expect(result.original[0].text).not.toBe(result.adversarial[0].text);
      expect(result.original[0].text.normalize("NFC")).toBe(
        result.adversarial[0].text.normalize("NFC"),
      );
    }
  });

  it("rejects a record that only matches after normalization", () => {
    // the text holds the decomposed form but the record claims the composed
    // one; a normalizing comparison would wrongly accept it
    const candidate = makeCandidate(
      `${DECOMPOSED}${TSHEG}ka`,
      `x${TSHEG}ka`,
      [[0, COMPOSED, "x"]],
    );
    expect(highlightCandidate(candidate).kind).toBe("fallback");
  });
});
