// Substitution highlighting driven by the candidate's own record.
//
// The attack stores (position, old unit, new unit) for every change. To mark
// those units we locate unit boundaries with the same delimiter-splitting
// rule the backend uses, then verify the record against the split: every
// recorded position must hold exactly the recorded old/new unit and every
// other unit must be identical in both texts. If verification fails (say the
// run used custom delimiters), we fall back to plain verbatim texts plus the
// substitution list instead of ever marking a wrong span. The texts are
// never diffed client-side and never normalized.

import { Candidate, Substitution } from "./types";

export const TSHEG = "་";
export const SHAD = "།";

export type Segment = {
  text: string;
  // null: separator run; number: unit index
  unit: number | null;
  changed: boolean;
};

export type HighlightResult =
  | { kind: "units"; original: Segment[]; adversarial: Segment[] }
  | { kind: "fallback"; reason: string };

type SplitText = { units: string[]; separators: string[] };

// Mirror of the backend splitter: delimiter runs collapse into separators,
// units are never empty, separators always bracket the unit list.
export function splitUnits(
  text: string,
  delimiters: ReadonlySet<string>,
  splitWhitespace: boolean,
): SplitText {
  const isSeparator = (ch: string) =>
    delimiters.has(ch) || (splitWhitespace && /\s/u.test(ch));
  const units: string[] = [];
  const separators: string[] = [""];
  let current = "";
  let inSeparator = true;
  for (const ch of text) {
    if (isSeparator(ch)) {
      if (!inSeparator) {
        units.push(current);
        current = "";
        separators.push(ch);
        inSeparator = true;
      } else {
        separators[separators.length - 1] += ch;
      }
    } else {
      inSeparator = false;
      current += ch;
    }
  }
  if (current) {
    units.push(current);
    separators.push("");
  }
  return { units, separators };
}

function validates(
  original: SplitText,
  adversarial: SplitText,
  substitutions: Substitution[],
): boolean {
  if (original.units.length !== adversarial.units.length) {
    return false;
  }
  const changed = new Map<number, [string, string]>();
  for (const [position, oldUnit, newUnit] of substitutions) {
    if (position < 0 || position >= original.units.length) {
      return false;
    }
    if (changed.has(position)) {
      return false;
    }
    changed.set(position, [oldUnit, newUnit]);
  }
  for (let i = 0; i < original.units.length; i += 1) {
    const pair = changed.get(i);
    if (pair) {
      if (original.units[i] !== pair[0] || adversarial.units[i] !== pair[1]) {
        return false;
      }
    } else if (original.units[i] !== adversarial.units[i]) {
      return false;
    }
  }
  return true;
}

function toSegments(split: SplitText, changed: Set<number>): Segment[] {
  const segments: Segment[] = [];
  for (let i = 0; i < split.units.length; i += 1) {
    if (split.separators[i]) {
      segments.push({ text: split.separators[i], unit: null, changed: false });
    }
    segments.push({ text: split.units[i], unit: i, changed: changed.has(i) });
  }
  const tail = split.separators[split.units.length];
  if (tail) {
    segments.push({ text: tail, unit: null, changed: false });
  }
  return segments;
}

const DELIMITERS: ReadonlySet<string> = new Set([TSHEG, SHAD]);

export function highlightCandidate(candidate: Candidate): HighlightResult {
  // syllable granularity first, then word granularity (whitespace splits too)
  for (const splitWhitespace of [false, true]) {
    const original = splitUnits(candidate.original_text, DELIMITERS, splitWhitespace);
    const adversarial = splitUnits(
      candidate.adversarial_text,
      DELIMITERS,
      splitWhitespace,
    );
    if (validates(original, adversarial, candidate.substituted_positions)) {
      const changed = new Set(candidate.substituted_positions.map(([p]) => p));
      return {
        kind: "units",
        original: toSegments(original, changed),
        adversarial: toSegments(adversarial, changed),
      };
    }
  }
  return {
    kind: "fallback",
    reason: "recorded substitutions do not align with the default unit split",
  };
}

// Sanity check used by callers and tests: segments must reproduce the text.
export function joinSegments(segments: Segment[]): string {
  return segments.map((segment) => segment.text).join("");
}
