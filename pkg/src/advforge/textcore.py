"""Unit segmentation and similarity primitives for delimiter-separated scripts.

Everything in this module is a pure function over immutable values: segmented
texts, embedding tables and visual-similarity tables never change after
construction, so they can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

TSHEG = "་"  # Tibetan intersyllabic mark
SHAD = "།"  # Tibetan sentence delimiter

DEFAULT_DELIMITERS = frozenset({TSHEG, SHAD})

GRANULARITIES = ("syllable", "word")


@dataclass(frozen=True)
class SegmentationConfig:
    """How raw text is split into perturbation units.

    ``delimiters`` must be single Unicode scalar values. At ``word``
    granularity any whitespace character also acts as a delimiter.
    """

    delimiters: frozenset[str] = DEFAULT_DELIMITERS
    granularity: str = "syllable"

    def __post_init__(self):
        if not self.delimiters:
            raise ValueError("delimiter set must be non-empty")
        for d in self.delimiters:
            if len(d) != 1:
                raise ValueError(f"delimiter {d!r} is not a single Unicode scalar")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        # frozenset is required for hashability of the config itself
        object.__setattr__(self, "delimiters", frozenset(self.delimiters))

    def is_separator(self, ch: str) -> bool:
        return ch in self.delimiters or (self.granularity == "word" and ch.isspace())


@dataclass(frozen=True)
class SegmentedText:
    """A text decomposed into units and the separator runs between them.

    Invariant: ``separators[0] + units[0] + separators[1] + ... + units[-1]
    + separators[-1]`` reproduces ``original`` exactly, and no unit is empty.
    ``separators`` always has one more element than ``units``.
    """

    original: str
    units: tuple[str, ...]
    separators: tuple[str, ...]
    config: SegmentationConfig = field(default_factory=SegmentationConfig)

    def __post_init__(self):
        if len(self.separators) != len(self.units) + 1:
            raise ValueError("separator count must equal unit count + 1")


def segment(text: str, config: SegmentationConfig | None = None) -> SegmentedText:
    """Split ``text`` into units at the config's delimiters.

    Runs of consecutive delimiters collapse into a single separator, so units
    are never empty. Degenerate inputs (empty or all-delimiter text) yield an
    empty unit list with the whole text as the sole separator.
    """
    if config is None:
        config = SegmentationConfig()
    units: list[str] = []
    separators: list[str] = []
    current = []
    in_separator = True
    separators.append("")
    for ch in text:
        if config.is_separator(ch):
            if not in_separator:
                units.append("".join(current))
                current = []
                separators.append(ch)
                in_separator = True
            else:
                separators[-1] += ch
        else:
            if in_separator:
                in_separator = False
            current.append(ch)
    if current:
        units.append("".join(current))
        separators.append("")
    return SegmentedText(
        original=text,
        units=tuple(units),
        separators=tuple(separators),
        config=config,
    )


def reassemble(seg: SegmentedText, replacements: Mapping[int, str]) -> str:
    """Rebuild the original text with the given unit substitutions.

    With an empty ``replacements`` map the result is ``seg.original``
    byte-for-byte. Replacement strings may not be empty or contain separator
    characters, otherwise the substitution would change the unit structure.
    """
    m = len(seg.units)
    for pos, new in replacements.items():
        if not 0 <= pos < m:
            raise ValueError(f"replacement position {pos} out of range (0..{m - 1})")
        if new == "":
            raise ValueError(f"replacement at position {pos} is empty")
        for ch in new:
            if seg.config.is_separator(ch):
                raise ValueError(
                    f"replacement {new!r} at position {pos} contains separator {ch!r}"
                )
    if not replacements:
        return seg.original
    parts = [seg.separators[0]]
    for i, unit in enumerate(seg.units):
        parts.append(replacements.get(i, unit))
        parts.append(seg.separators[i + 1])
    return "".join(parts)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # deletion
                    current[j - 1] + 1,  # insertion
                    previous[j - 1] + (ca != cb),  # substitution
                )
            )
        previous = current
    return previous[-1]


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    if np.array_equal(u, v):
        return 1.0
    value = float(np.dot(u, v)) / (nu * nv)
    return max(-1.0, min(1.0, value))


def ncc(a, b) -> float:
    """Normalized cross-correlation coefficient of two equal-shape matrices.

    Both matrices are mean-centered first; a constant matrix has zero
    variance and the coefficient is undefined for it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = float(np.sqrt(np.sum(ac * ac) * np.sum(bc * bc)))
    if denom == 0.0:
        raise ValueError("ncc undefined for constant matrix")
    value = float(np.sum(ac * bc)) / denom
    return max(-1.0, min(1.0, value))


class EmbeddingTable:
    """Static unit embeddings with a fixed dimension.

    Immutable after construction; lookups never mutate state.
    """

    def __init__(self, entries: Mapping[str, Sequence[float]]):
        if not entries:
            raise ValueError("embedding table must be non-empty")
        vectors: dict[str, np.ndarray] = {}
        dimension = None
        for unit, vec in entries.items():
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"embedding for {unit!r} is not a vector")
            if dimension is None:
                dimension = arr.shape[0]
            elif arr.shape[0] != dimension:
                raise ValueError(
                    f"embedding for {unit!r} has dimension {arr.shape[0]}, "
                    f"expected {dimension}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"embedding for {unit!r} has NaN/inf components")
            arr.setflags(write=False)
            vectors[unit] = arr
        self.dimension: int = int(dimension)
        self.entries: dict[str, np.ndarray] = vectors

    def __contains__(self, unit: str) -> bool:
        return unit in self.entries

    def __getitem__(self, unit: str) -> np.ndarray:
        try:
            return self.entries[unit]
        except KeyError:
            raise KeyError(f"unit {unit!r} not in embedding table") from None

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, fp: IO[str]) -> None:
        for unit in sorted(self.entries):
            line = {"unit": unit, "vec": [float(x) for x in self.entries[unit]]}
            fp.write(json.dumps(line, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, fp: IO[str]) -> "EmbeddingTable":
        entries = {}
        for lineno, raw in enumerate(fp, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
                entries[record["unit"]] = record["vec"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"bad embedding table line {lineno}: {exc}") from exc
        return cls(entries)


def embedding_candidates(
    table: EmbeddingTable, unit: str, k: int, min_sim: float
) -> list[tuple[str, float]]:
    """Top-k most cosine-similar units to ``unit``, excluding itself.

    Only candidates with similarity >= ``min_sim`` are returned. Ties are
    broken by lexicographic unit order so the result is deterministic.
    """
    if unit not in table.entries:
        raise KeyError(f"unit {unit!r} not in embedding table")
    if k <= 0:
        return []
    query = table.entries[unit]
    scored = []
    for other, vec in table.entries.items():
        if other == unit:
            continue
        sim = cosine_similarity(query, vec)
        if sim >= min_sim:
            scored.append((other, sim))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


class VisualSimilarityTable:
    """Per-unit lists of visually confusable units with scores in [0, 1]."""

    def __init__(self, entries: Mapping[str, Iterable[tuple[str, float]]]):
        table: dict[str, tuple[tuple[str, float], ...]] = {}
        for unit, cands in entries.items():
            cleaned = tuple((str(c), float(s)) for c, s in cands)
            previous = None
            for cand, score in cleaned:
                if cand == unit:
                    raise ValueError(f"unit {unit!r} lists itself as a candidate")
                if not 0.0 <= score <= 1.0:
                    raise ValueError(f"visual score {score} for {unit!r} outside [0, 1]")
                if previous is not None and score > previous:
                    raise ValueError(f"candidates for {unit!r} not sorted by score")
                previous = score
            table[unit] = cleaned
        self.entries = table

    def __contains__(self, unit: str) -> bool:
        return unit in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def pair_score(self, old: str, new: str) -> float | None:
        """Score of substituting ``old`` with ``new``; None when unlisted."""
        for cand, score in self.entries.get(old, ()):
            if cand == new:
                return score
        return None

    def save(self, fp: IO[str]) -> None:
        for unit in sorted(self.entries):
            cands = [[c, float(s)] for c, s in self.entries[unit]]
            fp.write(json.dumps({"unit": unit, "cands": cands}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, fp: IO[str]) -> "VisualSimilarityTable":
        entries = {}
        for lineno, raw in enumerate(fp, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
                entries[record["unit"]] = [(c, s) for c, s in record["cands"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"bad visual table line {lineno}: {exc}") from exc
        return cls(entries)


def visual_candidates(
    table: VisualSimilarityTable, unit: str, k: int
) -> list[tuple[str, float]]:
    """First k stored candidates for ``unit``; empty when the unit is absent."""
    if k <= 0:
        return []
    return list(table.entries.get(unit, ())[:k])
