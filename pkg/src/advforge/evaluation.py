"""Robustness evaluation over benchmark subsets.

The headline figure is the unweighted arithmetic mean of per-subset
accuracies; a size-weighted mean is reported alongside it, explicitly
labeled as auxiliary, and never substituted for the headline number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import IO, Mapping, Sequence

from .curation import Benchmark, BenchmarkEntry
from .victim import LabeledText, clean_accuracy


@dataclass
class SubsetResult:
    dataset: str
    size: int
    correct: int
    accuracy: float
    clean_accuracy: float | None = None
    degradation: float | None = None


@dataclass
class EvaluationReport:
    model: str
    benchmark: str
    subsets: list[SubsetResult]
    adv_robust: float
    clean_accuracy: float | None
    degradation: float | None
    weighted_accuracy: float
    provenance: dict
    generated_at: str

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "benchmark": self.benchmark,
            "subsets": [
                {
                    "dataset": s.dataset,
                    "size": s.size,
                    "correct": s.correct,
                    "accuracy": s.accuracy,
                    "clean_accuracy": s.clean_accuracy,
                    "degradation": s.degradation,
                }
                for s in self.subsets
            ],
            "adv_robust": self.adv_robust,
            "clean_accuracy": self.clean_accuracy,
            "degradation": self.degradation,
            "weighted_accuracy_auxiliary": self.weighted_accuracy,
            "provenance": self.provenance,
            "generated_at": self.generated_at,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "EvaluationReport":
        return cls(
            model=payload["model"],
            benchmark=payload["benchmark"],
            subsets=[
                SubsetResult(
                    dataset=s["dataset"],
                    size=s["size"],
                    correct=s["correct"],
                    accuracy=s["accuracy"],
                    clean_accuracy=s.get("clean_accuracy"),
                    degradation=s.get("degradation"),
                )
                for s in payload["subsets"]
            ],
            adv_robust=payload["adv_robust"],
            clean_accuracy=payload.get("clean_accuracy"),
            degradation=payload.get("degradation"),
            weighted_accuracy=payload["weighted_accuracy_auxiliary"],
            provenance=dict(payload.get("provenance", {})),
            generated_at=payload["generated_at"],
        )


def _count_correct(classifier, subset: Sequence[BenchmarkEntry]) -> int:
    return sum(
        1
        for entry in subset
        if classifier.predict(entry.candidate.adversarial_text) == entry.candidate.gold_label
    )


def subset_accuracy(classifier, subset: Sequence[BenchmarkEntry]) -> float:
    """Fraction of adversarial texts the classifier still labels correctly."""
    if not subset:
        raise ValueError("empty subset")
    return _count_correct(classifier, subset) / len(subset)


def adv_robust(accuracies: Sequence[float]) -> float:
    """Unweighted mean of per-subset accuracies; undefined for zero subsets."""
    if not accuracies:
        raise ValueError("adv_robust is undefined for zero subsets")
    for value in accuracies:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy out of range: {value}")
    return sum(accuracies) / len(accuracies)


def _resolve(classifiers, dataset: str):
    if isinstance(classifiers, Mapping):
        if dataset not in classifiers:
            raise ValueError(f"no classifier for benchmark subset {dataset!r}")
        return classifiers[dataset]
    return classifiers


def evaluate(
    classifiers,
    benchmark: Benchmark,
    clean_splits: Mapping[str, Sequence[LabeledText]] | None = None,
    model: str = "victim",
) -> EvaluationReport:
    """Score a victim (one classifier, or one per dataset) on a benchmark.

    ``classifiers`` is either a single classifier applied to every subset
    or a mapping from dataset name to the classifier trained on it. With
    ``clean_splits``, per-dataset clean accuracy and degradation
    (clean − adversarial) are included.
    """
    subsets = benchmark.subsets()
    if not subsets:
        raise ValueError("benchmark has zero subsets")
    results: list[SubsetResult] = []
    total_correct = 0
    total_size = 0
    clean_values: list[float] = []
    for dataset, entries in subsets.items():
        classifier = _resolve(classifiers, dataset)
        label_set = set(classifier.label_set)
        for entry in entries:
            if entry.candidate.gold_label not in label_set:
                raise ValueError(
                    f"benchmark label {entry.candidate.gold_label!r} in subset "
                    f"{dataset!r} is absent from the classifier label set"
                )
        correct = _count_correct(classifier, entries)
        accuracy = correct / len(entries)
        result = SubsetResult(
            dataset=dataset, size=len(entries), correct=correct, accuracy=accuracy
        )
        if clean_splits is not None:
            if dataset not in clean_splits:
                raise ValueError(f"no clean split for benchmark subset {dataset!r}")
            result.clean_accuracy = clean_accuracy(classifier, clean_splits[dataset])
            result.degradation = result.clean_accuracy - accuracy
            clean_values.append(result.clean_accuracy)
        total_correct += correct
        total_size += len(entries)
        results.append(result)

    robustness = adv_robust([r.accuracy for r in results])
    clean_mean = sum(clean_values) / len(clean_values) if clean_values else None
    return EvaluationReport(
        model=model,
        benchmark=benchmark.name,
        subsets=results,
        adv_robust=robustness,
        clean_accuracy=clean_mean,
        degradation=clean_mean - robustness if clean_mean is not None else None,
        weighted_accuracy=total_correct / total_size,
        provenance=dict(benchmark.provenance),
        generated_at=datetime.now(timezone.utc).isoformat(),
    )


def save_report(report: EvaluationReport, fp: IO[str]) -> None:
    json.dump(report.to_dict(), fp, ensure_ascii=False, indent=2)
    fp.write("\n")


def load_report(fp: IO[str]) -> EvaluationReport:
    return EvaluationReport.from_dict(json.load(fp))


def render_text_table(report: EvaluationReport) -> str:
    """Terminal rendering: one row per subset, then the headline mean."""
    lines = [f"model: {report.model}", f"benchmark: {report.benchmark}", ""]
    has_clean = any(s.clean_accuracy is not None for s in report.subsets)
    header = f"{'subset':<20} {'size':>6} {'accuracy':>9}"
    if has_clean:
        header += f" {'clean':>7} {'degradation':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for s in report.subsets:
        row = f"{s.dataset:<20} {s.size:>6} {s.accuracy:>9.4f}"
        if has_clean:
            row += f" {s.clean_accuracy:>7.4f} {s.degradation:>12.4f}"
        lines.append(row)
    lines.append("-" * len(header))
    lines.append(f"adversarial robustness (unweighted mean): {report.adv_robust:.4f}")
    if report.clean_accuracy is not None:
        lines.append(f"clean accuracy (mean over subsets):       {report.clean_accuracy:.4f}")
        lines.append(f"degradation (clean - adversarial):        {report.degradation:.4f}")
    lines.append(
        f"size-weighted accuracy (auxiliary only):  {report.weighted_accuracy:.4f}"
    )
    return "\n".join(lines) + "\n"
