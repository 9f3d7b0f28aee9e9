"""Importance-ranked greedy substitution attacks.

Three provider kinds supply substitution candidates: embedding-nearest
units, visually confusable units, and contextually plausible units from a
(left, right) context index or a remote endpoint. The search loop itself is
provider-agnostic, substitution-only, and fully deterministic.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Callable, Mapping, Sequence

import numpy as np

from .textcore import (
    EmbeddingTable,
    SegmentationConfig,
    SegmentedText,
    VisualSimilarityTable,
    embedding_candidates,
    levenshtein,
    reassemble,
    segment,
    visual_candidates,
)

_BOS = "\x02"  # sentinel for "no left neighbour"
_EOS = "\x03"  # sentinel for "no right neighbour"

STATUS_SUCCESS = "success"
STATUS_FAILURE = "failure"
STATUS_SKIPPED = "skipped"


class ProviderError(RuntimeError):
    """A candidate provider could not produce candidates."""


class _BudgetExhausted(Exception):
    pass


class EmbeddingProvider:
    """Nearest units by static-embedding cosine similarity."""

    kind = "embedding"

    def __init__(self, table: EmbeddingTable, k: int, min_sim: float = 0.0):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.table = table
        self.k = k
        self.min_sim = min_sim

    def propose(self, seg: SegmentedText, position: int) -> list[str]:
        unit = seg.units[position]
        if unit not in self.table:
            return []
        return [u for u, _ in embedding_candidates(self.table, unit, self.k, self.min_sim)]


class VisualProvider:
    """Visually confusable units from a similarity table."""

    kind = "visual"

    def __init__(self, table: VisualSimilarityTable, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.table = table
        self.k = k

    def propose(self, seg: SegmentedText, position: int) -> list[str]:
        unit = seg.units[position]
        return [u for u, _ in visual_candidates(self.table, unit, self.k)]


def build_context_index(
    texts: Sequence[str], config: SegmentationConfig
) -> dict[tuple[str, str], list[str]]:
    """Frequency index of units by (left, right) neighbour context.

    Stand-in for a masked language model: proposes the units most often seen
    between the same neighbours in the given corpus.
    """
    counts: dict[tuple[str, str], Counter] = {}
    for text in texts:
        units = segment(text, config).units
        for i, unit in enumerate(units):
            left = units[i - 1] if i > 0 else _BOS
            right = units[i + 1] if i < len(units) - 1 else _EOS
            counts.setdefault((left, right), Counter())[unit] += 1
    index = {}
    for context, counter in counts.items():
        index[context] = [u for u, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]
    return index


class ContextualProvider:
    """Context-frequency candidates from a corpus-derived index."""

    kind = "contextual"

    def __init__(self, index: Mapping[tuple[str, str], list[str]], k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.index = index
        self.k = k

    @classmethod
    def from_texts(
        cls, texts: Sequence[str], config: SegmentationConfig, k: int
    ) -> "ContextualProvider":
        return cls(build_context_index(texts, config), k)

    def propose(self, seg: SegmentedText, position: int) -> list[str]:
        units = seg.units
        unit = units[position]
        left = units[position - 1] if position > 0 else _BOS
        right = units[position + 1] if position < len(units) - 1 else _EOS
        ranked = self.index.get((left, right), [])
        return [u for u in ranked if u != unit][: self.k]


class RemoteContextualProvider:
    """Candidates from a remote contextual model endpoint.

    Contract: ``POST /candidates`` with {"left", "right", "unit", "k"}
    returns {"candidates": [str, ...]}. Sentinel neighbours are sent as
    empty strings. Any transport or schema failure raises ProviderError.
    """

    kind = "contextual"

    def __init__(self, base_url: str, k: int, timeout: float = 10.0, client=None):
        import httpx

        if k < 1:
            raise ValueError("k must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.k = k
        self.timeout = timeout
        self._client = client if client is not None else httpx.Client(timeout=timeout)

    def propose(self, seg: SegmentedText, position: int) -> list[str]:
        import httpx

        units = seg.units
        unit = units[position]
        body = {
            "left": units[position - 1] if position > 0 else "",
            "right": units[position + 1] if position < len(units) - 1 else "",
            "unit": unit,
            "k": self.k,
        }
        try:
            response = self._client.post(self.base_url + "/candidates", json=body)
        except httpx.HTTPError as exc:
            raise ProviderError(f"contextual endpoint failed: {exc}") from exc
        if response.status_code != 200:
            raise ProviderError(f"contextual endpoint returned HTTP {response.status_code}")
        try:
            cands = response.json()["candidates"]
        except (ValueError, KeyError) as exc:
            raise ProviderError(f"contextual endpoint returned bad payload: {exc}") from exc
        return [str(c) for c in cands if str(c) != unit][: self.k]


@dataclass(frozen=True)
class AttackConfig:
    provider: object
    granularity: SegmentationConfig = field(default_factory=SegmentationConfig)
    max_perturb_fraction: float = 1.0
    query_budget: int = 2000

    def __post_init__(self):
        if not 0.0 < self.max_perturb_fraction <= 1.0:
            raise ValueError("max_perturb_fraction must be in (0, 1]")
        if self.query_budget < 1:
            raise ValueError("query_budget must be >= 1")


@dataclass
class AttackCandidate:
    id: str
    dataset: str
    attack: str
    original_text: str
    adversarial_text: str
    gold_label: str
    orig_pred: str
    adv_pred: str
    status: str
    substituted_positions: list[tuple[int, str, str]]
    query_count: int
    edit_distance: int
    metrics: dict[str, float]
    note: str = ""

    def to_json_line(self) -> str:
        payload = {
            "id": self.id,
            "dataset": self.dataset,
            "attack": self.attack,
            "original_text": self.original_text,
            "adversarial_text": self.adversarial_text,
            "gold_label": self.gold_label,
            "orig_pred": self.orig_pred,
            "adv_pred": self.adv_pred,
            "status": self.status,
            "substituted_positions": [[p, o, n] for p, o, n in self.substituted_positions],
            "query_count": self.query_count,
            "edit_distance": self.edit_distance,
            "metrics": self.metrics,
            "note": self.note,
        }
        return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "AttackCandidate":
        obj = json.loads(line)
        return cls(
            id=obj["id"],
            dataset=obj["dataset"],
            attack=obj["attack"],
            original_text=obj["original_text"],
            adversarial_text=obj["adversarial_text"],
            gold_label=obj["gold_label"],
            orig_pred=obj["orig_pred"],
            adv_pred=obj["adv_pred"],
            status=obj["status"],
            substituted_positions=[(p, o, n) for p, o, n in obj["substituted_positions"]],
            query_count=obj["query_count"],
            edit_distance=obj["edit_distance"],
            metrics=dict(obj["metrics"]),
            note=obj.get("note", ""),
        )


def write_candidates(candidates: Sequence[AttackCandidate], fp: IO[str]) -> None:
    for cand in candidates:
        fp.write(cand.to_json_line() + "\n")


def read_candidates(fp: IO[str]) -> list[AttackCandidate]:
    return [AttackCandidate.from_json_line(line) for line in fp if line.strip()]


@dataclass
class AttackStats:
    total: int
    skipped: int
    successes: int
    failures: int
    success_rate: float | None
    mean_query_count: float
    mean_edit_distance: float | None

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "skipped": self.skipped,
            "successes": self.successes,
            "failures": self.failures,
            "success_rate": self.success_rate,
            "mean_query_count": self.mean_query_count,
            "mean_edit_distance": self.mean_edit_distance,
        }


def aggregate_stats(candidates: Sequence[AttackCandidate]) -> AttackStats:
    """Success rate over non-skipped, mean queries over all, mean edit
    distance over successes."""
    if not candidates:
        raise ValueError("no candidates to aggregate")
    skipped = sum(1 for c in candidates if c.status == STATUS_SKIPPED)
    successes = sum(1 for c in candidates if c.status == STATUS_SUCCESS)
    failures = sum(1 for c in candidates if c.status == STATUS_FAILURE)
    attempted = successes + failures
    return AttackStats(
        total=len(candidates),
        skipped=skipped,
        successes=successes,
        failures=failures,
        success_rate=successes / attempted if attempted else None,
        mean_query_count=sum(c.query_count for c in candidates) / len(candidates),
        mean_edit_distance=(
            sum(c.edit_distance for c in candidates if c.status == STATUS_SUCCESS) / successes
            if successes
            else None
        ),
    )


def make_candidate_id(dataset: str, attack: str, index: int, text: str, seed: int) -> str:
    digest = hashlib.blake2b(
        f"{seed}\x1f{text}".encode("utf-8"), digest_size=4
    ).hexdigest()
    return f"{dataset}:{attack}:{index:05d}:{digest}"


def delete_unit(seg: SegmentedText, position: int) -> str:
    """Text with one unit removed; its neighbouring separators merge."""
    units = seg.units[:position] + seg.units[position + 1 :]
    seps = list(seg.separators)
    seps[position : position + 2] = [seps[position] + seps[position + 1]]
    parts = [seps[0]]
    for i, unit in enumerate(units):
        parts.append(unit)
        parts.append(seps[i + 1])
    return "".join(parts)


def rank_importance(
    classifier,
    seg: SegmentedText,
    gold: str,
    _base_probs: np.ndarray | None = None,
    _query: Callable[[str], np.ndarray] | None = None,
) -> list[tuple[int, float]]:
    """Positions sorted by how much deleting the unit drops P(gold).

    Ties break toward the lower position index.
    """
    if not seg.units:
        raise ValueError("cannot rank importance of a text with no units")
    query = _query if _query is not None else classifier.predict_proba
    gold_index = list(classifier.label_set).index(gold)
    base = _base_probs if _base_probs is not None else query(seg.original)
    scored = []
    for i in range(len(seg.units)):
        probs = query(delete_unit(seg, i))
        scored.append((i, float(base[gold_index] - probs[gold_index])))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def greedy_attack(
    classifier,
    item,
    cfg: AttackConfig,
    seed: int = 0,
    dataset: str = "",
    index: int = 0,
    attack_name: str | None = None,
) -> AttackCandidate:
    """Attack one labeled text; always returns a candidate, never raises
    for provider failures.

    Skips items the victim already misclassifies. Otherwise walks positions
    in importance order: any substitution that flips the prediction wins
    immediately; failing that, the candidate that most reduces P(gold) is
    committed when the reduction is strict. Every predict_proba call counts
    against the query budget.
    """
    seg = segment(item.text, cfg.granularity)
    if not seg.units:
        raise ValueError("text has no perturbable units")
    attack_name = attack_name if attack_name is not None else cfg.provider.kind
    cand_id = make_candidate_id(dataset, attack_name, index, item.text, seed)
    label_set = list(classifier.label_set)
    if item.label not in label_set:
        raise ValueError(f"gold label {item.label!r} not in classifier label set")
    queries = 0

    def query(text: str) -> np.ndarray:
        nonlocal queries
        if queries >= cfg.query_budget:
            raise _BudgetExhausted
        queries += 1
        return classifier.predict_proba(text)

    def build(status, adv_text, adv_pred, substituted, note=""):
        distance = levenshtein(item.text, adv_text)
        return AttackCandidate(
            id=cand_id,
            dataset=dataset,
            attack=attack_name,
            original_text=item.text,
            adversarial_text=adv_text,
            gold_label=item.label,
            orig_pred=orig_pred,
            adv_pred=adv_pred,
            status=status,
            substituted_positions=substituted,
            query_count=queries,
            edit_distance=distance,
            metrics={"edit_ratio": distance / len(item.text)},
            note=note,
        )

    orig_probs = query(item.text)
    orig_pred = label_set[int(np.argmax(orig_probs))]
    if orig_pred != item.label:
        return build(STATUS_SKIPPED, item.text, orig_pred, [])

    gold_index = label_set.index(item.label)
    committed: dict[int, str] = {}
    substituted: list[tuple[int, str, str]] = []
    current_probs = orig_probs

    try:
        ranked = rank_importance(classifier, seg, item.label, orig_probs, query)
        max_positions = math.ceil(cfg.max_perturb_fraction * len(seg.units))
        for position, _score in ranked[:max_positions]:
            old_unit = seg.units[position]
            try:
                proposals = cfg.provider.propose(seg, position)
            except ProviderError as exc:
                adv = reassemble(seg, committed)
                pred = label_set[int(np.argmax(current_probs))]
                return build(STATUS_FAILURE, adv, pred, substituted, note=str(exc))
            best: tuple[float, str, np.ndarray] | None = None
            for candidate_unit in proposals:
                if candidate_unit == old_unit:
                    continue
                if any(cfg.granularity.is_separator(ch) for ch in candidate_unit):
                    continue  # would change unit structure
                attempt = dict(committed)
                attempt[position] = candidate_unit
                text2 = reassemble(seg, attempt)
                probs2 = query(text2)
                pred2 = label_set[int(np.argmax(probs2))]
                if pred2 != item.label:
                    substituted.append((position, old_unit, candidate_unit))
                    return build(STATUS_SUCCESS, text2, pred2, substituted)
                p_gold = float(probs2[gold_index])
                if best is None or p_gold < best[0]:
                    best = (p_gold, candidate_unit, probs2)
            if best is not None and best[0] < float(current_probs[gold_index]):
                committed[position] = best[1]
                substituted.append((position, old_unit, best[1]))
                current_probs = best[2]
    except _BudgetExhausted:
        pass

    adv = reassemble(seg, committed)
    pred = label_set[int(np.argmax(current_probs))]
    return build(STATUS_FAILURE, adv, pred, substituted)


def attack_item(
    classifier,
    item,
    cfg: AttackConfig,
    seed: int = 0,
    dataset: str = "dataset",
    index: int = 0,
    attack_name: str | None = None,
) -> AttackCandidate:
    """Attack one item with per-item isolation: unexpected errors become a
    failure candidate carrying the error in its note instead of raising."""
    name = attack_name if attack_name is not None else cfg.provider.kind
    try:
        return greedy_attack(
            classifier, item, cfg, seed=seed, dataset=dataset, index=index, attack_name=name
        )
    except Exception as exc:
        orig_pred = ""
        try:
            orig_pred = classifier.predict(item.text)
        except Exception:
            pass
        return AttackCandidate(
            id=make_candidate_id(dataset, name, index, item.text, seed),
            dataset=dataset,
            attack=name,
            original_text=item.text,
            adversarial_text=item.text,
            gold_label=item.label,
            orig_pred=orig_pred,
            adv_pred=orig_pred,
            status=STATUS_FAILURE,
            substituted_positions=[],
            query_count=0,
            edit_distance=0,
            metrics={"edit_ratio": 0.0},
            note=f"attack error: {exc}",
        )


def attack_dataset(
    classifier,
    test: Sequence,
    cfg: AttackConfig,
    seed: int = 0,
    dataset: str = "dataset",
    on_candidate: Callable[[AttackCandidate], None] | None = None,
    start_index: int = 0,
    done: Sequence[AttackCandidate] = (),
) -> tuple[list[AttackCandidate], AttackStats]:
    """Attack every test item in order; emits one candidate per item.

    ``start_index``/``done`` support resuming a partially written batch:
    items before ``start_index`` are taken from ``done`` instead of being
    re-attacked. ``on_candidate`` is called after each fresh candidate, in
    input order.
    """
    if not test and not done:
        raise ValueError("empty test set")
    candidates = list(done)
    for offset, item in enumerate(test[start_index:], start=start_index):
        cand = attack_item(classifier, item, cfg, seed=seed, dataset=dataset, index=offset)
        candidates.append(cand)
        if on_candidate is not None:
            on_candidate(cand)
    return candidates, aggregate_stats(candidates)
