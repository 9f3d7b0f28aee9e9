"""Benchmark curation: quality metrics, automatic filtering, redundant
human annotation, and benchmark assembly.

A candidate enters the benchmark only if it survives the metric filter and
every one of ``redundancy`` annotators scores it 4 or better. A single
score below 4 rejects it immediately and it is never shown to the
remaining annotators.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

from .attacks import STATUS_SUCCESS, AttackCandidate
from .textcore import (
    EmbeddingTable,
    SegmentationConfig,
    VisualSimilarityTable,
    cosine_similarity,
    levenshtein,
    segment,
)

ACCEPTED = "accepted"
REJECTED = "rejected"
PENDING = "pending"

MIN_SCORE = 1
MAX_SCORE = 5
ACCEPT_THRESHOLD = 4

ANNOTATION_GUIDELINES = {
    1: "Reject: the text is broken or the original meaning is lost.",
    2: "Lean reject: meaning is probably changed or the text reads unnaturally.",
    3: "Unsure: cannot decide whether meaning and fluency survive.",
    4: "Lean accept: meaning is preserved with at most minor awkwardness.",
    5: "Accept: reads naturally and fully preserves the original meaning.",
}


@dataclass
class CurationResources:
    """Lookup tables used to score candidate quality."""

    embedding_table: EmbeddingTable | None = None
    visual_table: VisualSimilarityTable | None = None
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)


def compute_metrics(cand: AttackCandidate, resources: CurationResources) -> AttackCandidate:
    """Recompute quality metrics for a successful candidate.

    edit_ratio is always present. embedding_cosine and visual_score are
    attached only when the corresponding table covers every substituted
    pair; otherwise the metric is left out rather than guessed.
    """
    if cand.status != STATUS_SUCCESS:
        raise ValueError("metrics are computed for successful candidates only")
    if not cand.original_text:
        raise ValueError("zero-length original text")
    distance = levenshtein(cand.original_text, cand.adversarial_text)
    metrics = {"edit_ratio": distance / len(cand.original_text)}

    orig_units = segment(cand.original_text, resources.segmentation).units
    adv_units = segment(cand.adversarial_text, resources.segmentation).units
    if len(orig_units) != len(adv_units):
        raise ValueError("candidate is not substitution-only")
    pairs = [(old, new) for _, old, new in cand.substituted_positions]

    table = resources.embedding_table
    if table is not None and pairs:
        if all(old in table and new in table for old, new in pairs):
            sims = [cosine_similarity(table[old], table[new]) for old, new in pairs]
            metrics["embedding_cosine"] = sum(sims) / len(sims)

    visual = resources.visual_table
    if visual is not None:
        scores = [visual.pair_score(old, new) for old, new in pairs]
        if all(s is not None for s in scores):
            unchanged = len(orig_units) - len(pairs)
            metrics["visual_score"] = (unchanged * 1.0 + sum(scores)) / len(orig_units)

    updated = AttackCandidate(**{**cand.__dict__, "metrics": metrics, "edit_distance": distance})
    return updated


@dataclass(frozen=True)
class FilterCriterion:
    metric: str
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in ("<=", ">="):
            raise ValueError(f"unsupported filter op {self.op!r}")
        if not isinstance(self.threshold, (int, float)) or self.threshold != self.threshold:
            raise ValueError("threshold must be a finite number")

    def passes(self, value: float) -> bool:
        return value <= self.threshold if self.op == "<=" else value >= self.threshold

    def reason(self) -> str:
        return f"failed:{self.metric}{self.op}{self.threshold:g}"


DEFAULT_FILTER = (FilterCriterion("edit_ratio", "<=", 0.1),)


@dataclass
class FilterResult:
    kept: list[AttackCandidate]
    dropped: list[tuple[AttackCandidate, str]]


def apply_filter(
    candidates: Sequence[AttackCandidate],
    criteria: Sequence[FilterCriterion] = DEFAULT_FILTER,
) -> FilterResult:
    """Partition candidates into kept and dropped; every drop carries a
    machine-readable reason. Thresholds are inclusive."""
    kept: list[AttackCandidate] = []
    dropped: list[tuple[AttackCandidate, str]] = []
    for cand in candidates:
        if cand.status != STATUS_SUCCESS:
            dropped.append((cand, "not_success"))
            continue
        reason = None
        for criterion in criteria:
            if criterion.metric not in cand.metrics:
                reason = f"metric_unavailable:{criterion.metric}"
                break
            if not criterion.passes(cand.metrics[criterion.metric]):
                reason = criterion.reason()
                break
        if reason is None:
            kept.append(cand)
        else:
            dropped.append((cand, reason))
    return FilterResult(kept=kept, dropped=dropped)


def write_rejection_report(dropped: Sequence[tuple[AttackCandidate, str]], fp: IO[str]) -> None:
    for cand, reason in dropped:
        fp.write(json.dumps({"id": cand.id, "reason": reason}, ensure_ascii=False) + "\n")


def accept_decision(scores: Sequence[int], redundancy: int) -> str:
    """Unanimity rule: every one of ``redundancy`` scores must be >= 4.

    Any score below 4 rejects immediately, so a rejected candidate may
    carry fewer than ``redundancy`` scores.
    """
    if redundancy < 1:
        raise ValueError("redundancy must be >= 1")
    if len(scores) > redundancy:
        raise ValueError(f"more scores than redundancy ({len(scores)} > {redundancy})")
    for score in scores:
        if not isinstance(score, int) or not MIN_SCORE <= score <= MAX_SCORE:
            raise ValueError(f"score must be an integer in [1, 5], got {score!r}")
    if any(score < ACCEPT_THRESHOLD for score in scores):
        return REJECTED
    if len(scores) < redundancy:
        return PENDING
    return ACCEPTED


@dataclass
class AnnotationSession:
    """Assignment, queueing, and score state for one annotation round."""

    id: str
    redundancy: int
    annotators: tuple[str, ...]
    candidates: dict[str, AttackCandidate]
    assignments: dict[str, list[str]]
    scores: dict[str, dict[str, int]] = field(default_factory=dict)
    score_events: list[tuple[str, str, int]] = field(default_factory=list)

    def decision(self, candidate_id: str) -> str:
        recorded = self.scores.get(candidate_id, {})
        return accept_decision(list(recorded.values()), self.redundancy)

    def next_for(self, annotator: str) -> str | None:
        """First queued candidate this annotator can still usefully score."""
        if annotator not in self.assignments:
            raise ValueError(f"unknown annotator {annotator!r}")
        for candidate_id in self.assignments[annotator]:
            if annotator in self.scores.get(candidate_id, {}):
                continue
            if self.decision(candidate_id) == PENDING:
                return candidate_id
        return None

    def progress(self) -> dict:
        counts = Counter(self.decision(cid) for cid in self.candidates)
        return {
            ACCEPTED: counts.get(ACCEPTED, 0),
            REJECTED: counts.get(REJECTED, 0),
            PENDING: counts.get(PENDING, 0),
            "scores_submitted": len(self.score_events),
        }

    @property
    def is_complete(self) -> bool:
        return self.progress()[PENDING] == 0

    def ordered_scores(self, candidate_id: str) -> list[int]:
        recorded = self.scores.get(candidate_id, {})
        return [recorded[a] for a in self.annotators if a in recorded]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "redundancy": self.redundancy,
            "annotators": list(self.annotators),
            "candidates": [
                json.loads(cand.to_json_line()) for cand in self.candidates.values()
            ],
            "assignments": {a: list(q) for a, q in self.assignments.items()},
            "scores": [
                {"candidate": cid, "annotator": a, "score": s}
                for cid, a, s in self.score_events
            ],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "AnnotationSession":
        session = cls(
            id=payload["id"],
            redundancy=payload["redundancy"],
            annotators=tuple(payload["annotators"]),
            candidates={
                c["id"]: AttackCandidate.from_json_line(json.dumps(c))
                for c in payload["candidates"]
            },
            assignments={a: list(q) for a, q in payload["assignments"].items()},
        )
        for event in payload.get("scores", []):
            submit_score(session, event["annotator"], event["candidate"], event["score"])
        return session


def open_session(
    candidates: Sequence[AttackCandidate],
    annotators: Sequence[str],
    redundancy: int = 3,
    seed: int = 0,
    salt: str = "",
) -> AnnotationSession:
    """Assign each candidate to ``redundancy`` annotators, balancing load
    (max and min per-annotator load differ by at most one).

    ``salt`` only perturbs the session id, so sessions opened by different
    owners over the same candidates stay distinguishable."""
    if not candidates:
        raise ValueError("no candidates to annotate")
    if len(set(annotators)) != len(annotators):
        raise ValueError("annotator names must be distinct")
    if len(annotators) < redundancy:
        raise ValueError(
            f"need at least {redundancy} annotators, got {len(annotators)}"
        )
    seen_ids = set()
    for cand in candidates:
        if cand.status != STATUS_SUCCESS:
            raise ValueError(f"candidate {cand.id} is not a success")
        if cand.id in seen_ids:
            raise ValueError(f"duplicate candidate id {cand.id}")
        seen_ids.add(cand.id)

    rng = random.Random(seed)
    loads = {a: 0 for a in annotators}
    assignments: dict[str, list[str]] = {a: [] for a in annotators}
    for cand in candidates:
        # lowest-load first; rng-shuffled priority breaks ties
        priority = list(annotators)
        rng.shuffle(priority)
        chosen = sorted(priority, key=lambda a: loads[a])[: redundancy]
        for annotator in chosen:
            loads[annotator] += 1
            assignments[annotator].append(cand.id)
    for annotator in annotators:
        random.Random(f"{seed}:{annotator}").shuffle(assignments[annotator])

    digest = hashlib.blake2b(
        ("\x1f".join(sorted(seen_ids)) + f"\x1f{seed}\x1f{salt}").encode("utf-8"),
        digest_size=6,
    ).hexdigest()
    return AnnotationSession(
        id=f"ann-{digest}",
        redundancy=redundancy,
        annotators=tuple(annotators),
        candidates={cand.id: cand for cand in candidates},
        assignments=assignments,
    )


def submit_score(
    session: AnnotationSession, annotator: str, candidate_id: str, score: int
) -> str:
    """Record one score and return the candidate's new decision."""
    if annotator not in session.assignments:
        raise ValueError(f"unknown annotator {annotator!r}")
    if candidate_id not in session.candidates:
        raise ValueError(f"unknown candidate {candidate_id!r}")
    if candidate_id not in session.assignments[annotator]:
        raise ValueError(f"candidate {candidate_id!r} is not assigned to {annotator!r}")
    if annotator in session.scores.get(candidate_id, {}):
        raise ValueError(f"{annotator!r} already scored {candidate_id!r}")
    if not isinstance(score, int) or isinstance(score, bool):
        raise ValueError("score must be an integer")
    if not MIN_SCORE <= score <= MAX_SCORE:
        raise ValueError(f"score must be in [1, 5], got {score}")
    session.scores.setdefault(candidate_id, {})[annotator] = score
    session.score_events.append((candidate_id, annotator, score))
    return session.decision(candidate_id)


def simulate_annotators(
    session: AnnotationSession,
    seed: int = 0,
    r5: float = 0.03,
    r4: float = 0.1,
    jitter_p: float = 0.1,
) -> None:
    """Deterministic stand-in annotators driven by edit_ratio.

    Base score: 5 when edit_ratio <= r5, 4 when <= r4, else 2. With
    probability ``jitter_p`` the score moves one step up or down (clamped
    to [1, 5]). Randomness is derived from (seed, annotator, candidate),
    so replays are exact.
    """
    for annotator in session.annotators:
        while True:
            candidate_id = session.next_for(annotator)
            if candidate_id is None:
                break
            ratio = session.candidates[candidate_id].metrics["edit_ratio"]
            if ratio <= r5:
                score = 5
            elif ratio <= r4:
                score = 4
            else:
                score = 2
            rng = random.Random(f"{seed}:{annotator}:{candidate_id}")
            if rng.random() < jitter_p:
                score = min(MAX_SCORE, max(MIN_SCORE, score + rng.choice((-1, 1))))
            submit_score(session, annotator, candidate_id, score)


@dataclass
class BenchmarkEntry:
    candidate: AttackCandidate
    scores: list[int]


@dataclass
class Benchmark:
    name: str
    provenance: dict
    entries: list[BenchmarkEntry]

    def subsets(self) -> dict[str, list[BenchmarkEntry]]:
        grouped: dict[str, list[BenchmarkEntry]] = {}
        for entry in self.entries:
            grouped.setdefault(entry.candidate.dataset, []).append(entry)
        return grouped


def assemble_benchmark(
    session: AnnotationSession, name: str, provenance: dict | None = None
) -> Benchmark:
    """Collect the unanimously accepted candidates into a benchmark."""
    progress = session.progress()
    if progress[PENDING]:
        raise ValueError(f"annotation incomplete: {progress[PENDING]} candidates pending")
    entries = []
    rejected_minima: list[int] = []
    for candidate_id, cand in session.candidates.items():
        decision = session.decision(candidate_id)
        if decision == ACCEPTED:
            entries.append(BenchmarkEntry(cand, session.ordered_scores(candidate_id)))
        else:
            rejected_minima.append(min(session.ordered_scores(candidate_id)))
    if not entries:
        histogram = Counter(rejected_minima)
        detail = " ".join(f"{s}:{histogram[s]}" for s in sorted(histogram))
        raise ValueError(f"no candidates accepted (min-score histogram: {detail})")
    return Benchmark(name=name, provenance=dict(provenance or {}), entries=entries)


def save_benchmark(benchmark: Benchmark, fp: IO[str]) -> None:
    header = {"benchmark": benchmark.name, "provenance": benchmark.provenance}
    fp.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")) + "\n")
    for entry in benchmark.entries:
        payload = json.loads(entry.candidate.to_json_line())
        payload["scores"] = entry.scores
        fp.write(json.dumps(payload, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_benchmark(fp: IO[str]) -> Benchmark:
    lines = [line for line in fp if line.strip()]
    if not lines:
        raise ValueError("empty benchmark file")
    header = json.loads(lines[0])
    if "benchmark" not in header:
        raise ValueError("missing benchmark header")
    entries = []
    for line in lines[1:]:
        payload = json.loads(line)
        scores = payload.pop("scores")
        entries.append(
            BenchmarkEntry(AttackCandidate.from_json_line(json.dumps(payload)), list(scores))
        )
    return Benchmark(
        name=header["benchmark"], provenance=dict(header.get("provenance", {})), entries=entries
    )
