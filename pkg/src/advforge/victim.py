"""Victim classifiers and dataset handling.

The trainable classifier is a multinomial logistic regression over hashed
unit-n-gram counts: attackable, trainable in seconds on a laptop, and fully
deterministic given a seed. Real model servers attach through
``RemoteClassifier`` instead (see the HTTP contract in the README).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .textcore import SegmentationConfig, segment

logger = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """A dataset file violated the JSON Lines record schema."""


class RemoteClassifierError(RuntimeError):
    """Transport failure or protocol violation from a remote classifier."""


@dataclass(frozen=True)
class LabeledText:
    text: str
    label: str


@dataclass
class Dataset:
    name: str
    label_set: tuple[str, ...]
    train: list[LabeledText]
    test: list[LabeledText]

    def __post_init__(self):
        known = set(self.label_set)
        for record in list(self.train) + list(self.test):
            if record.label not in known:
                raise ValueError(
                    f"record label {record.label!r} not in label set {self.label_set}"
                )

    @classmethod
    def from_splits(
        cls,
        name: str,
        train: Sequence[LabeledText],
        test: Sequence[LabeledText],
    ) -> "Dataset":
        labels = sorted({r.label for r in train} | {r.label for r in test})
        if not labels:
            raise ValueError("empty dataset")
        return cls(name=name, label_set=tuple(labels), train=list(train), test=list(test))

    @classmethod
    def from_records(
        cls,
        name: str,
        records: Sequence[LabeledText],
        test_fraction: float = 0.2,
        seed: int = 0,
    ) -> "Dataset":
        """Split a single record list into disjoint-by-text train/test."""
        if not records:
            raise ValueError("empty dataset")
        seen: dict[str, LabeledText] = {}
        for r in records:
            seen.setdefault(r.text, r)
        unique = list(seen.values())
        random.Random(seed).shuffle(unique)
        n_test = int(round(len(unique) * test_fraction))
        return cls.from_splits(name, unique[n_test:], unique[:n_test])


def load_records(fp: IO[str]) -> list[LabeledText]:
    """Parse JSON Lines records {"text": ..., "label": ...}.

    Errors carry the 1-based line number of the offending record.
    """
    records = []
    for lineno, raw in enumerate(fp, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DatasetFormatError(f"line {lineno}: record is not an object")
        for fieldname in ("text", "label"):
            if fieldname not in obj:
                raise DatasetFormatError(f"line {lineno}: missing field {fieldname!r}")
            if not isinstance(obj[fieldname], str):
                raise DatasetFormatError(f"line {lineno}: field {fieldname!r} is not a string")
        if obj["text"] == "":
            raise DatasetFormatError(f"line {lineno}: empty text")
        records.append(LabeledText(text=obj["text"], label=obj["label"]))
    return records


def load_dataset(source: IO[str], name: str, split: str = "train") -> Dataset:
    """Load one split file into a Dataset; the other split starts empty."""
    records = load_records(source)
    if not records:
        raise DatasetFormatError(f"dataset {name!r}: no records")
    if split == "train":
        return Dataset.from_splits(name, records, [])
    if split == "test":
        return Dataset.from_splits(name, [], records)
    raise ValueError(f"unknown split {split!r}")


def save_records(records: Iterable[LabeledText], fp: IO[str]) -> None:
    for r in records:
        fp.write(json.dumps({"text": r.text, "label": r.label}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class TrainConfig:
    ngram_orders: tuple[int, ...] = (1, 2)
    feature_dim: int = 2**18
    learning_rate: float = 0.1
    epochs: int = 10
    seed: int = 0
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)

    def __post_init__(self):
        if self.feature_dim <= 0 or self.feature_dim & (self.feature_dim - 1):
            raise ValueError("feature_dim must be a power of two")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.ngram_orders or any(n < 1 for n in self.ngram_orders):
            raise ValueError("ngram orders must be positive")
        object.__setattr__(self, "ngram_orders", tuple(sorted(set(self.ngram_orders))))

    def to_dict(self) -> dict:
        return {
            "ngram_orders": list(self.ngram_orders),
            "feature_dim": self.feature_dim,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "segmentation": {
                "delimiters": sorted(self.segmentation.delimiters),
                "granularity": self.segmentation.granularity,
            },
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainConfig":
        seg = obj.get("segmentation", {})
        return cls(
            ngram_orders=tuple(obj.get("ngram_orders", (1, 2))),
            feature_dim=int(obj.get("feature_dim", 2**18)),
            learning_rate=float(obj.get("learning_rate", 0.1)),
            epochs=int(obj.get("epochs", 10)),
            seed=int(obj.get("seed", 0)),
            segmentation=SegmentationConfig(
                delimiters=frozenset(seg.get("delimiters", DEFAULT_DELIM_LIST)),
                granularity=seg.get("granularity", "syllable"),
            ),
        )


DEFAULT_DELIM_LIST = ["་", "།"]


class HashedNgramFeaturizer:
    """Maps text to sparse hashed n-gram counts over segmentation units.

    The hash is keyed BLAKE2b (a fixed published function) with the training
    seed mixed in as the key, so feature indices are identical across
    platforms and processes.
    """

    def __init__(
        self,
        ngram_orders: Sequence[int],
        feature_dim: int,
        seed: int,
        segmentation: SegmentationConfig,
    ):
        self.ngram_orders = tuple(ngram_orders)
        self.feature_dim = feature_dim
        self.segmentation = segmentation
        self._key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
        self._mask = feature_dim - 1

    def _index(self, ngram: tuple[str, ...]) -> int:
        data = "\x1f".join(ngram).encode("utf-8")
        digest = hashlib.blake2b(data, digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") & self._mask

    def features(self, text: str) -> dict[int, int]:
        units = segment(text, self.segmentation).units
        counts: dict[int, int] = {}
        for order in self.ngram_orders:
            for i in range(len(units) - order + 1):
                idx = self._index(units[i : i + order])
                counts[idx] = counts.get(idx, 0) + 1
        return counts


def _scores(weights: np.ndarray, bias: np.ndarray, feats: Mapping[int, int]) -> np.ndarray:
    s = bias.copy()
    for idx, count in feats.items():
        s += weights[:, idx] * count
    return s


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def cross_entropy_loss(
    weights: np.ndarray, bias: np.ndarray, feats: Mapping[int, int], label_index: int
) -> float:
    scores = _scores(weights, bias, feats)
    shifted = scores - scores.max()
    log_z = math.log(np.exp(shifted).sum())
    return float(log_z - shifted[label_index])


def cross_entropy_gradient(
    weights: np.ndarray, bias: np.ndarray, feats: Mapping[int, int], label_index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Dense analytic gradient (dW, db) of the cross-entropy loss.

    The SGD loop applies the same gradient sparsely; this dense form exists
    so finite-difference checks can compare every coordinate.
    """
    probs = _softmax(_scores(weights, bias, feats))
    grad_scores = probs.copy()
    grad_scores[label_index] -= 1.0
    grad_w = np.zeros_like(weights)
    for idx, count in feats.items():
        grad_w[:, idx] += grad_scores * count
    return grad_w, grad_scores


class LocalClassifier:
    """Multinomial logistic regression over hashed n-gram features.

    Immutable after training; predictions from concurrent threads are safe.
    """

    kind = "local"

    def __init__(
        self,
        label_set: Sequence[str],
        weights: np.ndarray,
        bias: np.ndarray,
        config: TrainConfig,
    ):
        self.label_set = tuple(label_set)
        if weights.shape != (len(self.label_set), config.feature_dim):
            raise ValueError("weight matrix shape does not match labels x feature_dim")
        self.weights = weights
        self.bias = bias
        self.config = config
        self.featurizer = HashedNgramFeaturizer(
            config.ngram_orders, config.feature_dim, config.seed, config.segmentation
        )

    def predict_proba(self, text: str) -> np.ndarray:
        feats = self.featurizer.features(text)
        return _softmax(_scores(self.weights, self.bias, feats))

    def predict(self, text: str) -> str:
        return self.label_set[int(np.argmax(self.predict_proba(text)))]

    def save(self, path: str | Path) -> None:
        cols = {}
        nonzero = np.flatnonzero(np.any(self.weights != 0.0, axis=0))
        for idx in nonzero:
            cols[str(int(idx))] = [float(w) for w in self.weights[:, idx]]
        payload = {
            "kind": self.kind,
            "label_set": list(self.label_set),
            "config": self.config.to_dict(),
            "bias": [float(b) for b in self.bias],
            "nonzero_columns": cols,
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LocalClassifier":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("kind") != "local":
            raise ValueError(f"not a local classifier artifact: {path}")
        config = TrainConfig.from_dict(payload["config"])
        labels = payload["label_set"]
        weights = np.zeros((len(labels), config.feature_dim))
        for idx, col in payload["nonzero_columns"].items():
            weights[:, int(idx)] = col
        return cls(labels, weights, np.asarray(payload["bias"], dtype=float), config)


def train(dataset: Dataset, cfg: TrainConfig | None = None) -> LocalClassifier:
    """Train by plain SGD with per-epoch shuffling driven by cfg.seed.

    Deterministic: identical (dataset, cfg) produce bit-identical weights.
    """
    if cfg is None:
        cfg = TrainConfig()
    if not dataset.train:
        raise ValueError(f"dataset {dataset.name!r} has an empty training set")
    labels = dataset.label_set
    if len({r.label for r in dataset.train}) < 2:
        logger.warning(
            "dataset %s: training set has a single label; model will be degenerate",
            dataset.name,
        )
    label_index = {lab: i for i, lab in enumerate(labels)}
    featurizer = HashedNgramFeaturizer(
        cfg.ngram_orders, cfg.feature_dim, cfg.seed, cfg.segmentation
    )
    feature_cache = {r.text: featurizer.features(r.text) for r in dataset.train}
    weights = np.zeros((len(labels), cfg.feature_dim))
    bias = np.zeros(len(labels))
    order = list(range(len(dataset.train)))
    rng = random.Random(cfg.seed)
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for i in order:
            record = dataset.train[i]
            feats = feature_cache[record.text]
            probs = _softmax(_scores(weights, bias, feats))
            grad_scores = probs.copy()
            grad_scores[label_index[record.label]] -= 1.0
            step = cfg.learning_rate * grad_scores
            for idx, count in feats.items():
                weights[:, idx] -= step * count
            bias -= step
    return LocalClassifier(labels, weights, bias, cfg)


def clean_accuracy(classifier, split: Sequence[LabeledText]) -> float:
    if not split:
        raise ValueError("cannot compute accuracy of an empty split")
    correct = sum(1 for r in split if classifier.predict(r.text) == r.label)
    return correct / len(split)


class RemoteClassifier:
    """HTTP client for an external victim model.

    Contract: ``GET /labels`` returns {"labels": [...]} in fixed order;
    ``POST /classify`` with {"texts": [...]} returns {"labels": [...],
    "probs": [[...], ...]} whose prob rows align with the label order.
    At most ``max_in_flight`` requests run concurrently.
    """

    kind = "remote"

    def __init__(
        self,
        base_url: str,
        timeout: float = 10.0,
        max_in_flight: int = 4,
        client=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._semaphore = threading.Semaphore(max_in_flight)
        self._client = client if client is not None else httpx.Client(timeout=timeout)
        self.label_set = tuple(self._fetch_labels())

    def _fetch_labels(self) -> list[str]:
        payload = self._request("GET", "/labels")
        labels = payload.get("labels")
        if not isinstance(labels, list) or not labels:
            raise RemoteClassifierError("/labels did not return a non-empty label list")
        return [str(x) for x in labels]

    def _request(self, method: str, path: str, json_body=None) -> dict:
        import httpx

        with self._semaphore:
            try:
                response = self._client.request(method, self.base_url + path, json=json_body)
            except httpx.HTTPError as exc:
                raise RemoteClassifierError(f"transport failure on {path}: {exc}") from exc
        if response.status_code != 200:
            raise RemoteClassifierError(f"{path} returned HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise RemoteClassifierError(f"{path} returned non-JSON body") from exc

    def _validate_row(self, row) -> np.ndarray:
        probs = np.asarray(row, dtype=float)
        if probs.shape != (len(self.label_set),):
            raise RemoteClassifierError(
                f"probability row has {probs.size} entries, expected {len(self.label_set)}"
            )
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise RemoteClassifierError("not a distribution: negative or non-finite entries")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-3:
            raise RemoteClassifierError(f"not a distribution: sums to {total}")
        return probs / total

    def predict_proba_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        payload = self._request("POST", "/classify", {"texts": list(texts)})
        rows = payload.get("probs")
        if not isinstance(rows, list) or len(rows) != len(texts):
            raise RemoteClassifierError("probs row count does not match request")
        return [self._validate_row(row) for row in rows]

    def predict_proba(self, text: str) -> np.ndarray:
        return self.predict_proba_batch([text])[0]

    def predict(self, text: str) -> str:
        return self.label_set[int(np.argmax(self.predict_proba(text)))]
