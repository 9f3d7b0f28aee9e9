"""Deterministic synthetic corpora for demos and end-to-end tests.

Two text classification datasets over a small syllable inventory: a
two-label set where the majority signal class decides the label, and a
three-label set labeled by the dominant class of topic markers. Margins
are kept small so single-unit substitutions can flip a trained victim,
plus matching embedding and visual-confusability tables whose near
neighbours cross class lines.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textcore import EmbeddingTable, SegmentationConfig, VisualSimilarityTable
from .victim import Dataset, LabeledText, TrainConfig, save_records

NEUTRAL = ["ཀ", "ཁ", "ག", "ང", "ཅ", "ཆ", "ཇ", "ཉ", "ཏ", "ཐ", "ད", "ན"]
EXTRA_NEUTRAL = ["ར", "ལ", "ཤ", "ས"]
SENT_POS = ["པ", "ཕ", "བ"]
SENT_NEG = ["མ", "ཙ", "ཚ"]
TOPIC_MARKERS = {"arts": ["ཛ", "ཝ"], "trade": ["ཞ", "ཟ"], "sport": ["འ", "ཡ"]}

SENTIMENT = "sentiment"
TOPIC = "topic"


@dataclass
class FixtureBundle:
    datasets: dict[str, Dataset]
    embedding_table: EmbeddingTable
    visual_table: VisualSimilarityTable
    segmentation: SegmentationConfig
    train_config_a: TrainConfig
    train_config_b: TrainConfig


def _margin(rng: random.Random) -> int:
    # mostly barely-decided texts; a tail of robust ones exercises failures
    if rng.random() < 0.1:
        return rng.choice((3, 4))
    return rng.choice((1, 1, 2))


def _fill_and_join(rng: random.Random, signal_units: list[str]) -> str:
    length = rng.randint(15, 20)
    units = list(signal_units)
    while len(units) < length:
        units.append(rng.choice(NEUTRAL + EXTRA_NEUTRAL))
    rng.shuffle(units)
    return "་".join(units)


def _maybe_mislabel(rng: random.Random, label: str, label_set: tuple, noise: float) -> str:
    if noise and rng.random() < noise:
        return rng.choice([other for other in label_set if other != label])
    return label


def _sentiment_record(rng: random.Random, noise: float) -> LabeledText:
    label = rng.choice(("pos", "neg"))
    minor_count = rng.randint(0, 3)
    major_count = minor_count + _margin(rng)
    major, minor = (SENT_POS, SENT_NEG) if label == "pos" else (SENT_NEG, SENT_POS)
    signal = [rng.choice(major) for _ in range(major_count)]
    signal += [rng.choice(minor) for _ in range(minor_count)]
    label = _maybe_mislabel(rng, label, ("pos", "neg"), noise)
    return LabeledText(_fill_and_join(rng, signal), label)


def _topic_record(rng: random.Random, noise: float) -> LabeledText:
    label = rng.choice(tuple(TOPIC_MARKERS))
    others = [name for name in TOPIC_MARKERS if name != label]
    other_counts = {name: rng.randint(0, 3) for name in others}
    winner_count = max(other_counts.values()) + _margin(rng)
    signal = [rng.choice(TOPIC_MARKERS[label]) for _ in range(winner_count)]
    for name, count in other_counts.items():
        signal += [rng.choice(TOPIC_MARKERS[name]) for _ in range(count)]
    label = _maybe_mislabel(rng, label, tuple(TOPIC_MARKERS), noise)
    return LabeledText(_fill_and_join(rng, signal), label)


def _build_split(
    rng: random.Random, make_record, count: int, seen: set[str], noise: float
) -> list[LabeledText]:
    records = []
    while len(records) < count:
        record = make_record(rng, noise)
        if record.text in seen:
            continue
        seen.add(record.text)
        records.append(record)
    return records


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _near(rng: np.random.Generator, base: np.ndarray, spread: float) -> np.ndarray:
    v = base + spread * rng.normal(size=base.shape)
    return v / np.linalg.norm(v)


def _build_embedding_table(seed: int, dim: int = 8) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    entries: dict[str, list[float]] = {}

    def put(unit, vec):
        entries[unit] = [float(x) for x in vec]

    # cross-class pairs share a direction, so nearest neighbours flip labels
    for pos_unit, neg_unit in zip(SENT_POS, SENT_NEG):
        base = _unit_vector(rng, dim)
        put(pos_unit, _near(rng, base, 0.05))
        put(neg_unit, _near(rng, base, 0.05))
    topic_units = list(zip(*TOPIC_MARKERS.values()))
    for triple in topic_units:
        base = _unit_vector(rng, dim)
        for unit in triple:
            put(unit, _near(rng, base, 0.07))
    for i in range(0, len(NEUTRAL), 2):
        base = _unit_vector(rng, dim)
        put(NEUTRAL[i], _near(rng, base, 0.1))
        put(NEUTRAL[i + 1], _near(rng, base, 0.1))
    for unit in EXTRA_NEUTRAL:
        put(unit, _unit_vector(rng, dim))
    return EmbeddingTable(entries)


def _build_visual_table() -> VisualSimilarityTable:
    pairs: list[tuple[str, str, float]] = []
    for pos_unit, neg_unit in zip(SENT_POS, SENT_NEG):
        pairs.append((pos_unit, neg_unit, 0.9))
    for arts, trade, sport in zip(*TOPIC_MARKERS.values()):
        pairs.append((arts, trade, 0.88))
        pairs.append((trade, sport, 0.86))
        pairs.append((arts, sport, 0.84))
    for i in range(0, len(NEUTRAL), 2):
        pairs.append((NEUTRAL[i], NEUTRAL[i + 1], 0.8))
    pairs.append(("ར", "ལ", 0.75))
    pairs.append(("ཤ", "ས", 0.72))

    table: dict[str, list[tuple[str, float]]] = {}
    for a, b, score in pairs:
        table.setdefault(a, []).append((b, score))
        table.setdefault(b, []).append((a, score))
    ordered = {
        unit: sorted(cands, key=lambda pair: (-pair[1], pair[0]))
        for unit, cands in table.items()
    }
    return VisualSimilarityTable(ordered)


def make_fixture(
    seed: int = 0, train_size: int = 800, test_size: int = 200, noise: float = 0.03
) -> FixtureBundle:
    """Build the full bundle: two datasets, both tables, two train configs.

    ``noise`` mislabels that fraction of records, so trained victims
    misclassify a few test items and attack batches include skips.
    """
    rng = random.Random(seed)
    datasets = {}
    for name, make_record in ((SENTIMENT, _sentiment_record), (TOPIC, _topic_record)):
        seen: set[str] = set()
        train_split = _build_split(rng, make_record, train_size, seen, noise)
        test_split = _build_split(rng, make_record, test_size, seen, noise)
        datasets[name] = Dataset.from_splits(name, train_split, test_split)
    return FixtureBundle(
        datasets=datasets,
        embedding_table=_build_embedding_table(seed + 1),
        visual_table=_build_visual_table(),
        segmentation=SegmentationConfig(),
        train_config_a=TrainConfig(feature_dim=2**18, epochs=6, learning_rate=0.1, seed=11),
        train_config_b=TrainConfig(feature_dim=2**16, epochs=8, learning_rate=0.05, seed=23),
    )


def write_fixture(bundle: FixtureBundle, root: str | Path) -> dict[str, Path]:
    """Write the bundle as plain data files; returns the path of each part."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for name, dataset in bundle.datasets.items():
        for split in ("train", "test"):
            path = root / f"{name}.{split}.jsonl"
            with open(path, "w", encoding="utf-8") as fp:
                save_records(getattr(dataset, split), fp)
            paths[f"{name}.{split}"] = path
    paths["embeddings"] = root / "embeddings.jsonl"
    with open(paths["embeddings"], "w", encoding="utf-8") as fp:
        bundle.embedding_table.save(fp)
    paths["visual"] = root / "visual.jsonl"
    with open(paths["visual"], "w", encoding="utf-8") as fp:
        bundle.visual_table.save(fp)
    return paths


def fixture_run_config(
    bundle: FixtureBundle,
    paths: dict[str, Path],
    seed: int = 0,
    annotation_mode: str = "simulate",
) -> dict:
    """Assemble a complete pipeline run config for a written fixture.

    Victim A is the attack target, victim B the held-out evaluation model;
    all three substitution providers run with the bundled tables.
    """
    return {
        "seed": seed,
        "datasets": {
            name: {
                "train": str(paths[f"{name}.train"]),
                "test": str(paths[f"{name}.test"]),
            }
            for name in bundle.datasets
        },
        "embedding_table": str(paths["embeddings"]),
        "visual_table": str(paths["visual"]),
        "victims": {
            "a": bundle.train_config_a.to_dict(),
            "b": bundle.train_config_b.to_dict(),
        },
        "attacks": [
            {"provider": "embedding", "k": 4},
            {"provider": "visual", "k": 4},
            {"provider": "contextual", "k": 4},
        ],
        "annotation": {
            "mode": annotation_mode,
            "annotators": ["ann-1", "ann-2", "ann-3"],
            "redundancy": 3,
            "jitter_p": 0.0,
        },
        "benchmark_name": "fixture-bench",
    }
