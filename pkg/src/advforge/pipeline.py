"""Resumable run orchestration over the four workbench stages.

A run is a plain directory: the config snapshot and per-stage states live
in ``manifest.json``, progress in an append-only ``events.jsonl``, and
every artifact as an ordinary file whose sha256 is recorded in the
manifest. There is no database; crash recovery and auditing work from the
files alone. The config snapshot is written once at creation and never
mutated afterwards.

Stage order is construct -> generate -> curate -> evaluate. A stage can
run when its upstream stage is done or when the config supplies the
upstream artifacts externally (pre-trained models, candidate files, or a
finished benchmark). Runs can also declare a parent run, inheriting its
benchmark byte-for-byte so evaluation-only child runs never regenerate
data.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

from .attacks import (
    STATUS_SUCCESS,
    AttackCandidate,
    AttackConfig,
    ContextualProvider,
    EmbeddingProvider,
    RemoteContextualProvider,
    VisualProvider,
    aggregate_stats,
    attack_item,
    read_candidates,
)
from .curation import (
    AnnotationSession,
    CurationResources,
    FilterCriterion,
    apply_filter,
    assemble_benchmark,
    compute_metrics,
    load_benchmark,
    open_session,
    save_benchmark,
    simulate_annotators,
    write_rejection_report,
)
from .evaluation import evaluate, render_text_table, save_report
from .textcore import (
    GRANULARITIES,
    EmbeddingTable,
    SegmentationConfig,
    VisualSimilarityTable,
)
from .victim import (
    DEFAULT_DELIM_LIST,
    Dataset,
    LabeledText,
    LocalClassifier,
    TrainConfig,
    clean_accuracy,
    load_records,
    train,
)

ENV_RUN_ROOT = "ADVFORGE_RUN_ROOT"

STAGES = ("construct", "generate", "curate", "evaluate")
PENDING = "pending"
RUNNING = "running"
DONE = "done"
FAILED = "failed"

PROVIDERS = ("embedding", "visual", "contextual")
ANNOTATION_MODES = ("simulate", "manual")

MANIFEST_NAME = "manifest.json"
EVENTS_NAME = "events.jsonl"
SESSION_NAME = "session.json"
LOCK_NAME = "LOCK"

DEFAULT_FILTER_SPEC = [{"metric": "edit_ratio", "op": "<=", "threshold": 0.1}]
DEFAULT_ANNOTATION = {
    "mode": "simulate",
    "annotators": ["ann-1", "ann-2", "ann-3"],
    "redundancy": 3,
    "r5": 0.03,
    "r4": 0.1,
    "jitter_p": 0.0,
}

_NAME_SAFE = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


class ConfigError(ValueError):
    """Invalid run configuration; carries one message per offending field."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid config: " + "; ".join(self.errors))


class PrerequisiteError(RuntimeError):
    """A stage was requested before its inputs exist."""


class ConflictError(RuntimeError):
    """The requested execution collides with another one."""


class ArtifactMismatchError(RuntimeError):
    """A recorded artifact is missing or its bytes changed on disk."""


def run_root(root: str | Path | None = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(ENV_RUN_ROOT, "runs"))


def run_dir(run_id: str, root: str | Path | None = None) -> Path:
    return run_root(root) / run_id


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_num(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _resolved(path) -> str:
    return str(Path(path).expanduser().resolve())


def validate_config(raw: Mapping) -> dict:
    """Normalize a raw config mapping; raises ConfigError listing every
    invalid field (including referenced files that do not exist)."""
    if not isinstance(raw, Mapping):
        raise ConfigError(["config must be a mapping"])
    errors: list[str] = []
    cfg: dict = {}

    seed = raw.get("seed")
    if seed is None:
        errors.append("seed: required")
    elif not _is_int(seed):
        errors.append("seed: must be an integer")
    else:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)

    seg_raw = raw.get("segmentation", {}) or {}
    delimiters = list(seg_raw.get("delimiters", DEFAULT_DELIM_LIST))
    granularity = seg_raw.get("granularity", "syllable")
    if not delimiters or any(not isinstance(d, str) or len(d) != 1 for d in delimiters):
        errors.append("segmentation.delimiters: expected a list of single characters")
        delimiters = DEFAULT_DELIM_LIST
    if granularity not in GRANULARITIES:
        errors.append(f"segmentation.granularity: must be one of {', '.join(GRANULARITIES)}")
        granularity = "syllable"
    cfg["segmentation"] = {"delimiters": sorted(set(delimiters)), "granularity": granularity}

    datasets_raw = raw.get("datasets")
    datasets: dict[str, dict] = {}
    if not isinstance(datasets_raw, Mapping) or not datasets_raw:
        errors.append("datasets: at least one dataset with train/test paths is required")
    else:
        for name, paths in datasets_raw.items():
            if not isinstance(paths, Mapping):
                errors.append(f"datasets.{name}: expected a mapping with train/test paths")
                continue
            entry = {}
            for split in ("train", "test"):
                value = paths.get(split)
                if not value:
                    errors.append(f"datasets.{name}.{split}: required path missing")
                    continue
                resolved = _resolved(value)
                if not Path(resolved).is_file():
                    errors.append(f"datasets.{name}.{split}: file not found: {resolved}")
                else:
                    entry[split] = resolved
            if len(entry) == 2:
                datasets[str(name)] = entry
    cfg["datasets"] = datasets

    victims_raw = raw.get("victims", {}) or {}
    unknown = set(victims_raw) - {"a", "b"}
    if unknown:
        errors.append(f"victims: unknown keys {sorted(unknown)} (expected 'a' and 'b')")
    cfg["victims"] = {}
    for key, default_seed in (("a", cfg["seed"] + 11), ("b", cfg["seed"] + 23)):
        spec = dict(victims_raw.get(key, {}) or {})
        spec.setdefault("seed", default_seed)
        spec.setdefault("segmentation", cfg["segmentation"])
        try:
            cfg["victims"][key] = TrainConfig.from_dict(spec).to_dict()
        except (TypeError, ValueError) as exc:
            errors.append(f"victims.{key}: {exc}")

    for field_name in ("embedding_table", "visual_table"):
        value = raw.get(field_name)
        if value is None:
            cfg[field_name] = None
        else:
            resolved = _resolved(value)
            if not Path(resolved).is_file():
                errors.append(f"{field_name}: file not found: {resolved}")
            cfg[field_name] = resolved

    attacks_raw = raw.get("attacks")
    attacks: list[dict] = []
    if (
        not isinstance(attacks_raw, Sequence)
        or isinstance(attacks_raw, (str, bytes))
        or not attacks_raw
    ):
        errors.append("attacks: at least one attack entry is required")
        attacks_raw = []
    names_seen: set[str] = set()
    for i, entry in enumerate(attacks_raw):
        prefix = f"attacks[{i}]"
        if not isinstance(entry, Mapping):
            errors.append(f"{prefix}: expected a mapping")
            continue
        provider = entry.get("provider")
        if provider not in PROVIDERS:
            errors.append(f"{prefix}.provider: must be one of {', '.join(PROVIDERS)}")
            continue
        k = entry.get("k", 4)
        if not _is_int(k) or k < 1:
            errors.append(f"{prefix}.k: must be an integer >= 1")
            continue
        name = str(entry.get("name", provider))
        if not name or any(ch not in _NAME_SAFE for ch in name):
            errors.append(f"{prefix}.name: use only letters, digits, '.', '_' and '-'")
            continue
        norm: dict = {"provider": provider, "k": k, "name": name}
        if provider == "embedding":
            if raw.get("embedding_table") is None:
                errors.append(f"{prefix}: embedding provider needs the embedding_table path")
            min_sim = entry.get("min_sim", 0.0)
            if not _is_num(min_sim):
                errors.append(f"{prefix}.min_sim: must be a number")
            else:
                norm["min_sim"] = float(min_sim)
        if provider == "visual" and raw.get("visual_table") is None:
            errors.append(f"{prefix}: visual provider needs the visual_table path")
        if provider == "contextual" and entry.get("endpoint") is not None:
            norm["endpoint"] = str(entry["endpoint"])
        if name in names_seen:
            errors.append(f"{prefix}.name: duplicate attack name {name!r}; give distinct names")
            continue
        names_seen.add(name)
        attacks.append(norm)
    cfg["attacks"] = attacks

    mpf = raw.get("max_perturb_fraction", 1.0)
    if not _is_num(mpf) or not 0 < float(mpf) <= 1:
        errors.append("max_perturb_fraction: must be in (0, 1]")
        cfg["max_perturb_fraction"] = 1.0
    else:
        cfg["max_perturb_fraction"] = float(mpf)
    budget = raw.get("query_budget", 2000)
    if not _is_int(budget) or budget < 1:
        errors.append("query_budget: must be an integer >= 1")
        cfg["query_budget"] = 2000
    else:
        cfg["query_budget"] = budget

    filter_raw = raw.get("filter", DEFAULT_FILTER_SPEC)
    criteria: list[dict] = []
    if not isinstance(filter_raw, Sequence) or isinstance(filter_raw, (str, bytes)):
        errors.append("filter: expected a list of criteria")
    else:
        for i, crit in enumerate(filter_raw):
            try:
                parsed = FilterCriterion(
                    str(crit["metric"]), str(crit["op"]), float(crit["threshold"])
                )
            except (KeyError, TypeError, ValueError) as exc:
                errors.append(f"filter[{i}]: {exc}")
                continue
            criteria.append(
                {"metric": parsed.metric, "op": parsed.op, "threshold": parsed.threshold}
            )
    table_backed = {"embedding_cosine": "embedding_table", "visual_score": "visual_table"}
    for crit in criteria:
        needed = table_backed.get(crit["metric"])
        if needed and raw.get(needed) is None:
            errors.append(f"filter: metric {crit['metric']!r} needs the {needed} path")
    cfg["filter"] = criteria

    ann = dict(DEFAULT_ANNOTATION)
    ann_raw = raw.get("annotation", {}) or {}
    if not isinstance(ann_raw, Mapping):
        errors.append("annotation: expected a mapping")
        ann_raw = {}
    ann.update(ann_raw)
    if ann["mode"] not in ANNOTATION_MODES:
        errors.append(f"annotation.mode: must be one of {', '.join(ANNOTATION_MODES)}")
        ann["mode"] = "simulate"
    redundancy = ann["redundancy"]
    if not _is_int(redundancy) or redundancy < 1:
        errors.append("annotation.redundancy: must be an integer >= 1")
        redundancy = 1
    ann["redundancy"] = redundancy
    annotators = ann["annotators"]
    if (
        not isinstance(annotators, Sequence)
        or isinstance(annotators, (str, bytes))
        or not annotators
        or any(not isinstance(a, str) or not a for a in annotators)
    ):
        errors.append("annotation.annotators: expected a non-empty list of names")
        ann["annotators"] = list(DEFAULT_ANNOTATION["annotators"])
    else:
        annotators = [str(a) for a in annotators]
        if len(set(annotators)) != len(annotators):
            errors.append("annotation.annotators: names must be distinct")
        elif len(annotators) < redundancy:
            errors.append(
                "annotation.annotators: need at least as many annotators as the redundancy"
            )
        ann["annotators"] = annotators
    for knob in ("r5", "r4", "jitter_p"):
        value = ann[knob]
        if not _is_num(value) or not 0 <= float(value) <= 1:
            errors.append(f"annotation.{knob}: must be a number in [0, 1]")
            ann[knob] = DEFAULT_ANNOTATION[knob]
        else:
            ann[knob] = float(value)
    cfg["annotation"] = {key: ann[key] for key in DEFAULT_ANNOTATION}

    cfg["benchmark_name"] = str(raw.get("benchmark_name", f"bench-{cfg['seed']}"))

    ext_raw = raw.get("external", {}) or {}
    ext: dict = {}
    if not isinstance(ext_raw, Mapping):
        errors.append("external: expected a mapping")
        ext_raw = {}
    if "candidates" in ext_raw:
        paths = []
        for i, value in enumerate(list(ext_raw["candidates"])):
            resolved = _resolved(value)
            if not Path(resolved).is_file():
                errors.append(f"external.candidates[{i}]: file not found: {resolved}")
            paths.append(resolved)
        ext["candidates"] = paths
    if ext_raw.get("benchmark"):
        resolved = _resolved(ext_raw["benchmark"])
        if not Path(resolved).is_file():
            errors.append(f"external.benchmark: file not found: {resolved}")
        ext["benchmark"] = resolved
    if "models" in ext_raw:
        models: dict[str, dict[str, str]] = {}
        for victim_key, per_ds in dict(ext_raw["models"]).items():
            if victim_key not in ("a", "b"):
                errors.append(f"external.models.{victim_key}: expected keys 'a' or 'b'")
                continue
            models[victim_key] = {}
            for ds, value in dict(per_ds).items():
                resolved = _resolved(value)
                if not Path(resolved).is_file():
                    errors.append(f"external.models.{victim_key}.{ds}: file not found: {resolved}")
                models[victim_key][ds] = resolved
        ext["models"] = models
    cfg["external"] = ext

    parent = raw.get("parent_run")
    cfg["parent_run"] = str(parent) if parent else None

    if errors:
        raise ConfigError(errors)
    return cfg


def _fresh_stage() -> dict:
    return {"status": PENDING, "error": None, "started_at": None, "finished_at": None, "summary": {}}


@dataclass
class RunManifest:
    run_id: str
    created_at: str
    config: dict
    stages: dict[str, dict]
    artifacts: dict[str, dict]
    parent_run: str | None = None

    @classmethod
    def fresh(cls, run_id: str, config: dict, parent_run: str | None = None) -> "RunManifest":
        return cls(
            run_id=run_id,
            created_at=_utcnow(),
            config=config,
            stages={name: _fresh_stage() for name in STAGES},
            artifacts={},
            parent_run=parent_run,
        )

    def status(self, stage: str) -> str:
        return self.stages[stage]["status"]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "parent_run": self.parent_run,
            "config": self.config,
            "stages": self.stages,
            "artifacts": self.artifacts,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RunManifest":
        return cls(
            run_id=obj["run_id"],
            created_at=obj["created_at"],
            config=dict(obj["config"]),
            stages={name: dict(state) for name, state in obj["stages"].items()},
            artifacts={name: dict(entry) for name, entry in obj["artifacts"].items()},
            parent_run=obj.get("parent_run"),
        )


def save_manifest(manifest: RunManifest, directory: str | Path) -> None:
    path = Path(directory) / MANIFEST_NAME
    tmp = path.with_suffix(".tmp")
    tmp.write_text(
        json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    os.replace(tmp, path)


def load_manifest(run_id: str, root: str | Path | None = None) -> RunManifest:
    path = run_dir(run_id, root) / MANIFEST_NAME
    if not path.is_file():
        raise ValueError(f"unknown run id {run_id!r}")
    return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


def list_runs(root: str | Path | None = None) -> list[RunManifest]:
    base = run_root(root)
    manifests = []
    if not base.is_dir():
        return manifests
    for entry in sorted(base.iterdir()):
        path = entry / MANIFEST_NAME
        if path.is_file():
            manifests.append(RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return manifests


def _artifact_path(manifest: RunManifest, name: str, directory: Path) -> Path:
    entry = manifest.artifacts[name]
    path = Path(entry["path"])
    return path if path.is_absolute() else directory / path


def _record_input(manifest: RunManifest, name: str, path: str) -> None:
    manifest.artifacts[name] = {"path": path, "sha256": file_sha256(path)}


def create_run(raw_config: Mapping, root: str | Path | None = None) -> RunManifest:
    """Validate the config, allocate a fresh run directory, hash every
    declared input, and inherit the parent benchmark when one is named."""
    config = validate_config(raw_config)
    base = run_root(root)
    base.mkdir(parents=True, exist_ok=True)

    parent = None
    if config["parent_run"]:
        parent = load_manifest(config["parent_run"], base)
        if "benchmark" not in parent.artifacts:
            raise ConfigError(
                [f"parent_run: run {config['parent_run']!r} has no benchmark artifact to inherit"]
            )

    run_id = "run-" + time.strftime("%Y%m%dT%H%M%S") + "-" + uuid.uuid4().hex[:8]
    directory = base / run_id
    directory.mkdir()
    manifest = RunManifest.fresh(run_id, config, parent_run=config["parent_run"])

    for name, paths in config["datasets"].items():
        for split in ("train", "test"):
            _record_input(manifest, f"input:dataset:{name}:{split}", paths[split])
    if config["embedding_table"]:
        _record_input(manifest, "input:table:embedding", config["embedding_table"])
    if config["visual_table"]:
        _record_input(manifest, "input:table:visual", config["visual_table"])
    ext = config["external"]
    for i, path in enumerate(ext.get("candidates", ())):
        _record_input(manifest, f"input:external:candidates:{i:02d}", path)
    if ext.get("benchmark"):
        _record_input(manifest, "input:external:benchmark", ext["benchmark"])
    for victim_key, per_ds in ext.get("models", {}).items():
        for ds, path in per_ds.items():
            _record_input(manifest, f"input:external:model:{victim_key}:{ds}", path)

    if parent is not None:
        source = _artifact_path(parent, "benchmark", run_dir(parent.run_id, base))
        data = source.read_bytes()
        digest = hashlib.sha256(data).hexdigest()
        if digest != parent.artifacts["benchmark"]["sha256"]:
            raise ArtifactMismatchError(
                f"parent benchmark {source} does not match its recorded hash"
            )
        (directory / "benchmark.jsonl").write_bytes(data)
        manifest.artifacts["benchmark"] = {"path": "benchmark.jsonl", "sha256": digest}

    save_manifest(manifest, directory)
    return manifest


def read_events(path: str | Path, after_seq: int = 0) -> list[dict]:
    """Parse complete event lines; a partial trailing line from a crash is
    ignored, as is anything after a corrupted line."""
    path = Path(path)
    events: list[dict] = []
    if not path.is_file():
        return events
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            if not line.endswith("\n"):
                break
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                break
            if record.get("seq", 0) > after_seq:
                events.append(record)
    return events


class _EventLog:
    """Append-only progress log with strictly increasing sequence numbers."""

    def __init__(self, path: Path):
        self.path = path
        self._seq = 0
        for record in read_events(path):
            self._seq = record["seq"]
        self._fp = open(path, "a", encoding="utf-8")

    def emit(
        self,
        stage: str,
        event: str,
        items_done: int | None = None,
        items_total: int | None = None,
        message: str = "",
    ) -> dict:
        self._seq += 1
        record = {
            "seq": self._seq,
            "ts": _utcnow(),
            "stage": stage,
            "event": event,
            "items_done": items_done,
            "items_total": items_total,
            "message": message,
        }
        self._fp.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
        self._fp.flush()
        return record

    def close(self) -> None:
        self._fp.close()


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


_LOCAL_LOCKS: set[str] = set()
_LOCAL_GUARD = threading.Lock()


class _RunLock:
    """Exclusive per-run lock: a pid file plus an in-process registry so
    both separate processes and threads of one process conflict cleanly.
    Lock files left behind by dead processes are reclaimed."""

    def __init__(self, directory: Path):
        self.path = directory / LOCK_NAME
        self._key = str(self.path)
        self._held = False

    def __enter__(self) -> "_RunLock":
        with _LOCAL_GUARD:
            if self._key in _LOCAL_LOCKS:
                raise ConflictError("run is busy: another stage is executing in this process")
            _LOCAL_LOCKS.add(self._key)
        try:
            for _ in range(3):
                try:
                    fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                except FileExistsError:
                    try:
                        holder = int(self.path.read_text().strip() or 0)
                    except (OSError, ValueError):
                        holder = 0
                    if holder and holder != os.getpid() and _pid_alive(holder):
                        raise ConflictError(
                            f"run is locked by pid {holder}: a stage is already executing"
                        )
                    try:
                        self.path.unlink()
                    except FileNotFoundError:
                        pass
                    continue
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                self._held = True
                return self
            raise ConflictError("could not acquire the run lock")
        finally:
            if not self._held:
                with _LOCAL_GUARD:
                    _LOCAL_LOCKS.discard(self._key)

    def __exit__(self, *exc) -> None:
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        with _LOCAL_GUARD:
            _LOCAL_LOCKS.discard(self._key)
        self._held = False


@dataclass
class StageOutcome:
    summary: dict
    artifacts: dict[str, Path] = field(default_factory=dict)
    complete: bool = True
    items_done: int = 0
    items_total: int = 0
    waiting_message: str = ""


_STAGE_ARTIFACT_PREFIXES = {
    "construct": ("model:",),
    "generate": ("candidates:",),
    "curate": ("rejections", "session", "benchmark"),
    "evaluate": ("report", "report-text"),
}


def _owned_by(name: str, stage: str) -> bool:
    return any(name == p or name.startswith(p) for p in _STAGE_ARTIFACT_PREFIXES[stage])


def _reset_from(manifest: RunManifest, stage: str, directory: Path) -> None:
    """Reset the stage and everything downstream to pending, removing the
    artifacts they produced (files and manifest entries)."""
    start = STAGES.index(stage)
    for downstream in STAGES[start:]:
        manifest.stages[downstream] = _fresh_stage()
        for name in [n for n in manifest.artifacts if _owned_by(n, downstream)]:
            entry = manifest.artifacts.pop(name)
            path = Path(entry["path"])
            if not path.is_absolute():
                try:
                    (directory / path).unlink()
                except FileNotFoundError:
                    pass
    if start <= STAGES.index("curate"):
        try:
            (directory / SESSION_NAME).unlink()
        except FileNotFoundError:
            pass


def _verify(manifest: RunManifest, name: str, directory: Path) -> Path:
    entry = manifest.artifacts.get(name)
    if entry is None:
        raise ArtifactMismatchError(f"artifact {name!r} is not recorded in the manifest")
    path = _artifact_path(manifest, name, directory)
    if not path.is_file():
        raise ArtifactMismatchError(f"artifact {name!r} is missing on disk: {path}")
    digest = file_sha256(path)
    if digest != entry["sha256"]:
        raise ArtifactMismatchError(
            f"artifact {name!r} does not match its recorded hash (file changed): {path}"
        )
    return path


def _resolve_inputs(manifest: RunManifest, stage: str, directory: Path) -> dict:
    """Collect and hash-verify the inputs a stage will consume, raising
    PrerequisiteError when the upstream stage has not produced them and no
    external substitute was configured."""
    cfg = manifest.config
    inputs: dict = {}
    external = cfg["external"]

    if stage in ("construct", "generate"):
        for name in cfg["datasets"]:
            for split in ("train", "test"):
                _verify(manifest, f"input:dataset:{name}:{split}", directory)
    if stage == "construct":
        return inputs

    if stage == "generate":
        if cfg["embedding_table"]:
            _verify(manifest, "input:table:embedding", directory)
        if cfg["visual_table"]:
            _verify(manifest, "input:table:visual", directory)
        inputs["models_a"] = _resolve_models(manifest, "a", directory)
        return inputs

    if stage == "curate":
        if manifest.status("generate") == DONE:
            names = sorted(n for n in manifest.artifacts if n.startswith("candidates:"))
            inputs["candidates"] = [_verify(manifest, n, directory) for n in names]
        elif external.get("candidates"):
            names = sorted(
                n for n in manifest.artifacts if n.startswith("input:external:candidates:")
            )
            inputs["candidates"] = [_verify(manifest, n, directory) for n in names]
        else:
            raise PrerequisiteError(
                "prerequisite: stage 'generate' is not done and no external "
                "candidate files were supplied"
            )
        return inputs

    if "benchmark" in manifest.artifacts:
        inputs["benchmark"] = _verify(manifest, "benchmark", directory)
    elif external.get("benchmark"):
        inputs["benchmark"] = _verify(manifest, "input:external:benchmark", directory)
    else:
        raise PrerequisiteError(
            "prerequisite: stage 'curate' is not done and no external benchmark was supplied"
        )
    inputs["models_b"] = _resolve_models(manifest, "b", directory)
    for name in cfg["datasets"]:
        _verify(manifest, f"input:dataset:{name}:test", directory)
    return inputs


def _resolve_models(manifest: RunManifest, victim_key: str, directory: Path) -> dict[str, Path]:
    cfg = manifest.config
    supplied = cfg["external"].get("models", {}).get(victim_key, {})
    models: dict[str, Path] = {}
    if manifest.status("construct") == DONE:
        for name in cfg["datasets"]:
            models[name] = _verify(manifest, f"model:{victim_key}:{name}", directory)
    elif supplied and all(name in supplied for name in cfg["datasets"]):
        for name in cfg["datasets"]:
            models[name] = _verify(manifest, f"input:external:model:{victim_key}:{name}", directory)
    else:
        raise PrerequisiteError(
            f"prerequisite: stage 'construct' is not done and no external victim-{victim_key} "
            "models cover every dataset"
        )
    return models


def _segmentation_config(cfg: Mapping) -> SegmentationConfig:
    seg = cfg["segmentation"]
    return SegmentationConfig(delimiters=frozenset(seg["delimiters"]), granularity=seg["granularity"])


def _load_split(path: str | Path) -> list[LabeledText]:
    with open(path, encoding="utf-8") as fp:
        return load_records(fp)


def _load_datasets(cfg: Mapping) -> dict[str, Dataset]:
    return {
        name: Dataset.from_splits(name, _load_split(paths["train"]), _load_split(paths["test"]))
        for name, paths in cfg["datasets"].items()
    }


def _run_construct(manifest: RunManifest, directory: Path, inputs: dict, events: _EventLog) -> StageOutcome:
    cfg = manifest.config
    datasets = _load_datasets(cfg)
    total = 2 * len(datasets)
    done = 0
    summary: dict = {"clean_accuracy": {}}
    artifacts: dict[str, Path] = {}
    for victim_key in ("a", "b"):
        train_cfg = TrainConfig.from_dict(cfg["victims"][victim_key])
        accuracies = {}
        for name, dataset in datasets.items():
            classifier = train(dataset, train_cfg)
            path = directory / f"model-{victim_key}-{name}.json"
            classifier.save(path)
            artifacts[f"model:{victim_key}:{name}"] = path
            accuracies[name] = clean_accuracy(classifier, dataset.test)
            done += 1
            events.emit(
                "construct",
                "progress",
                done,
                total,
                f"trained victim {victim_key} on {name}: clean accuracy {accuracies[name]:.4f}",
            )
        summary["clean_accuracy"][victim_key] = accuracies
    return StageOutcome(summary=summary, artifacts=artifacts, items_done=done, items_total=total)


def _candidate_file(directory: Path, dataset: str, idx: int, entry: Mapping) -> Path:
    return directory / f"candidates-{dataset}-{idx:02d}-{entry['name']}.jsonl"


def _candidate_key(dataset: str, idx: int, entry: Mapping) -> str:
    return f"candidates:{dataset}:{idx:02d}:{entry['name']}"


def _provider_for(entry: Mapping, dataset: Dataset, seg: SegmentationConfig, emb, vis):
    kind = entry["provider"]
    if kind == "embedding":
        return EmbeddingProvider(emb, k=entry["k"], min_sim=entry.get("min_sim", 0.0))
    if kind == "visual":
        return VisualProvider(vis, k=entry["k"])
    if entry.get("endpoint"):
        return RemoteContextualProvider(entry["endpoint"], k=entry["k"])
    return ContextualProvider.from_texts([r.text for r in dataset.train], seg, entry["k"])


def _load_partial(path: Path) -> list[AttackCandidate]:
    """Load the complete candidate records from a possibly crash-truncated
    file, rewriting it to exactly those records so appends resume cleanly."""
    if not path.is_file():
        return []
    good: list[str] = []
    candidates: list[AttackCandidate] = []
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            if not line.endswith("\n"):
                break
            stripped = line.rstrip("\n")
            try:
                candidates.append(AttackCandidate.from_json_line(stripped))
            except Exception:
                break
            good.append(stripped)
    content = "".join(line + "\n" for line in good)
    if path.read_text(encoding="utf-8") != content:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(content, encoding="utf-8")
        os.replace(tmp, path)
    return candidates


def _run_generate(manifest: RunManifest, directory: Path, inputs: dict, events: _EventLog) -> StageOutcome:
    cfg = manifest.config
    seg = _segmentation_config(cfg)
    datasets = _load_datasets(cfg)
    emb = None
    if cfg["embedding_table"]:
        with open(cfg["embedding_table"], encoding="utf-8") as fp:
            emb = EmbeddingTable.load(fp)
    vis = None
    if cfg["visual_table"]:
        with open(cfg["visual_table"], encoding="utf-8") as fp:
            vis = VisualSimilarityTable.load(fp)
    resources = CurationResources(embedding_table=emb, visual_table=vis, segmentation=seg)
    classifiers = {name: LocalClassifier.load(path) for name, path in inputs["models_a"].items()}

    batches = [
        (name, idx, entry)
        for name in cfg["datasets"]
        for idx, entry in enumerate(cfg["attacks"])
    ]
    items_total = sum(len(datasets[name].test) for name, _, _ in batches)

    # resume baseline: records already written by an interrupted attempt
    existing: dict[tuple[str, int], list[AttackCandidate]] = {}
    items_done = 0
    for name, idx, entry in batches:
        path = _candidate_file(directory, name, idx, entry)
        done_candidates = _load_partial(path)
        if len(done_candidates) > len(datasets[name].test):
            raise ArtifactMismatchError(
                f"candidate file {path.name} holds more records than there are test items"
            )
        existing[(name, idx)] = done_candidates
        items_done += len(done_candidates)

    artifacts: dict[str, Path] = {}
    summary: dict = {"batches": []}
    for name, idx, entry in batches:
        dataset = datasets[name]
        provider = _provider_for(entry, dataset, seg, emb, vis)
        attack_cfg = AttackConfig(
            provider=provider,
            granularity=seg,
            max_perturb_fraction=cfg["max_perturb_fraction"],
            query_budget=cfg["query_budget"],
        )
        path = _candidate_file(directory, name, idx, entry)
        results = list(existing[(name, idx)])
        classifier = classifiers[name]
        with open(path, "a", encoding="utf-8") as fp:
            for index in range(len(results), len(dataset.test)):
                cand = attack_item(
                    classifier,
                    dataset.test[index],
                    attack_cfg,
                    seed=cfg["seed"],
                    dataset=name,
                    index=index,
                    attack_name=entry["name"],
                )
                if cand.status == STATUS_SUCCESS:
                    cand = compute_metrics(cand, resources)
                fp.write(cand.to_json_line() + "\n")
                fp.flush()
                results.append(cand)
                items_done += 1
                events.emit(
                    "generate",
                    "progress",
                    items_done,
                    items_total,
                    f"{name}/{entry['name']}: item {index + 1}/{len(dataset.test)} {cand.status}",
                )
        stats = aggregate_stats(results)
        artifacts[_candidate_key(name, idx, entry)] = path
        summary["batches"].append({"dataset": name, "attack": entry["name"], **stats.to_dict()})
    return StageOutcome(
        summary=summary, artifacts=artifacts, items_done=items_done, items_total=items_total
    )


def save_session(session: AnnotationSession, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fp:
        json.dump(session.to_dict(), fp, ensure_ascii=False)
    os.replace(tmp, path)


def load_session(path: str | Path) -> AnnotationSession:
    with open(path, encoding="utf-8") as fp:
        return AnnotationSession.from_dict(json.load(fp))


def _run_curate(manifest: RunManifest, directory: Path, inputs: dict, events: _EventLog) -> StageOutcome:
    cfg = manifest.config
    ann = cfg["annotation"]
    candidates: list[AttackCandidate] = []
    for path in inputs["candidates"]:
        with open(path, encoding="utf-8") as fp:
            candidates.extend(read_candidates(fp))

    criteria = [FilterCriterion(c["metric"], c["op"], c["threshold"]) for c in cfg["filter"]]
    result = apply_filter(candidates, criteria)
    rejections_path = directory / "rejections.jsonl"
    with open(rejections_path, "w", encoding="utf-8") as fp:
        write_rejection_report(result.dropped, fp)
    artifacts: dict[str, Path] = {"rejections": rejections_path}
    events.emit(
        "curate",
        "progress",
        0,
        len(result.kept),
        f"filter kept {len(result.kept)} of {len(candidates)} candidates",
    )
    if not result.kept:
        raise ValueError("filter kept no candidates; nothing to annotate")

    session_path = directory / SESSION_NAME
    if session_path.is_file():
        session = load_session(session_path)
        if set(session.candidates) != {c.id for c in result.kept}:
            raise ArtifactMismatchError(
                "existing annotation session does not cover the filtered candidates; "
                "re-run curate with force=True"
            )
    else:
        session = open_session(
            result.kept,
            ann["annotators"],
            redundancy=ann["redundancy"],
            seed=cfg["seed"],
            salt=manifest.run_id,
        )
    if ann["mode"] == "simulate":
        simulate_annotators(
            session, seed=cfg["seed"], r5=ann["r5"], r4=ann["r4"], jitter_p=ann["jitter_p"]
        )
    save_session(session, session_path)
    artifacts["session"] = session_path

    progress = session.progress()
    total = len(session.candidates)
    decided = total - progress["pending"]
    events.emit(
        "curate",
        "progress",
        decided,
        total,
        f"annotation: {progress['accepted']} accepted, {progress['rejected']} rejected, "
        f"{progress['pending']} pending",
    )
    summary: dict = {
        "filtered_in": len(result.kept),
        "filtered_out": len(result.dropped),
        "annotation": progress,
    }
    if progress["pending"]:
        return StageOutcome(
            summary=summary,
            artifacts=artifacts,
            complete=False,
            items_done=decided,
            items_total=total,
            waiting_message=(
                f"waiting for manual annotation: {progress['pending']} candidates pending"
            ),
        )

    provenance = {
        "run_id": manifest.run_id,
        "seed": cfg["seed"],
        "attacks": [a["name"] for a in cfg["attacks"]],
        "filter": cfg["filter"],
        "redundancy": ann["redundancy"],
        "annotators": ann["annotators"],
        "mode": ann["mode"],
    }
    benchmark = assemble_benchmark(session, cfg["benchmark_name"], provenance)
    benchmark_path = directory / "benchmark.jsonl"
    with open(benchmark_path, "w", encoding="utf-8") as fp:
        save_benchmark(benchmark, fp)
    artifacts["benchmark"] = benchmark_path
    summary["benchmark"] = {
        "name": benchmark.name,
        "size": len(benchmark.entries),
        "subsets": {name: len(entries) for name, entries in benchmark.subsets().items()},
    }
    return StageOutcome(summary=summary, artifacts=artifacts, items_done=total, items_total=total)


def _run_evaluate(manifest: RunManifest, directory: Path, inputs: dict, events: _EventLog) -> StageOutcome:
    cfg = manifest.config
    with open(inputs["benchmark"], encoding="utf-8") as fp:
        benchmark = load_benchmark(fp)
    classifiers = {name: LocalClassifier.load(path) for name, path in inputs["models_b"].items()}
    subsets = benchmark.subsets()
    missing = sorted(set(subsets) - set(classifiers))
    if missing:
        raise ValueError(f"no classifier for benchmark subsets: {', '.join(missing)}")
    clean_splits = {
        name: _load_split(cfg["datasets"][name]["test"])
        for name in subsets
        if name in cfg["datasets"]
    }
    report = evaluate(
        {name: classifiers[name] for name in subsets},
        benchmark,
        clean_splits=clean_splits or None,
        model="victim-b",
    )
    report_path = directory / "report.json"
    with open(report_path, "w", encoding="utf-8") as fp:
        save_report(report, fp)
    text_path = directory / "report.txt"
    text_path.write_text(render_text_table(report) + "\n", encoding="utf-8")
    message = f"adv_robust {report.adv_robust:.4f}"
    if report.clean_accuracy is not None:
        message += f", clean {report.clean_accuracy:.4f}"
    events.emit("evaluate", "progress", len(subsets), len(subsets), message)
    summary = {
        "adv_robust": report.adv_robust,
        "clean_accuracy": report.clean_accuracy,
        "degradation": report.degradation,
        "subsets": {s.dataset: s.accuracy for s in report.subsets},
    }
    return StageOutcome(
        summary=summary,
        artifacts={"report": report_path, "report-text": text_path},
        items_done=len(subsets),
        items_total=len(subsets),
    )


_RUNNERS: dict[str, Callable[[RunManifest, Path, dict, _EventLog], StageOutcome]] = {
    "construct": _run_construct,
    "generate": _run_generate,
    "curate": _run_curate,
    "evaluate": _run_evaluate,
}


def execute_stage(
    run_id: str, stage: str, root: str | Path | None = None, force: bool = False
) -> RunManifest:
    """Run one stage to completion (or, for manual annotation, to its
    waiting state) under an exclusive per-run lock.

    Concurrent executions on the same run raise ConflictError, as does
    re-running a done stage without ``force=True``; forcing also resets
    every downstream stage and removes their artifacts. Inputs are
    hash-verified before work starts, so silently edited artifacts raise
    ArtifactMismatchError instead of contaminating downstream stages.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    base = run_root(root)
    directory = base / run_id
    if not (directory / MANIFEST_NAME).is_file():
        raise ValueError(f"unknown run id {run_id!r}")
    with _RunLock(directory):
        manifest = load_manifest(run_id, base)
        if manifest.status(stage) == DONE and not force:
            raise ConflictError(
                f"stage {stage!r} is already done; pass force=True to re-run it"
            )
        if force:
            _reset_from(manifest, stage, directory)
            save_manifest(manifest, directory)
        inputs = _resolve_inputs(manifest, stage, directory)
        events = _EventLog(directory / EVENTS_NAME)
        try:
            state = manifest.stages[stage]
            state.update(status=RUNNING, error=None, started_at=_utcnow(), finished_at=None)
            save_manifest(manifest, directory)
            events.emit(stage, "stage_started", None, None, f"stage {stage} started")
            outcome = _RUNNERS[stage](manifest, directory, inputs, events)
            for name, path in outcome.artifacts.items():
                manifest.artifacts[name] = {
                    "path": str(path.relative_to(directory)),
                    "sha256": file_sha256(path),
                }
            state["summary"] = outcome.summary
            if outcome.complete:
                state.update(status=DONE, finished_at=_utcnow())
                save_manifest(manifest, directory)
                events.emit(
                    stage,
                    "stage_finished",
                    outcome.items_done,
                    outcome.items_total,
                    f"stage {stage} done",
                )
            else:
                save_manifest(manifest, directory)
                events.emit(
                    stage,
                    "progress",
                    outcome.items_done,
                    outcome.items_total,
                    outcome.waiting_message,
                )
            return manifest
        except Exception as exc:
            state = manifest.stages[stage]
            state.update(
                status=FAILED, error=f"{type(exc).__name__}: {exc}", finished_at=_utcnow()
            )
            save_manifest(manifest, directory)
            events.emit(stage, "stage_failed", None, None, str(exc))
            raise
        finally:
            events.close()


def is_terminal(manifest: RunManifest) -> bool:
    statuses = [manifest.status(stage) for stage in STAGES]
    return all(s == DONE for s in statuses) or any(s == FAILED for s in statuses)


def snapshot_event(manifest: RunManifest, root: str | Path | None = None) -> dict:
    """One self-contained state event: stage statuses plus the latest
    per-stage progress counters, so a late subscriber starts current."""
    directory = run_dir(manifest.run_id, root)
    events = read_events(directory / EVENTS_NAME)
    progress: dict[str, dict] = {}
    for record in events:
        if record["event"] == "progress":
            progress[record["stage"]] = {
                "items_done": record["items_done"],
                "items_total": record["items_total"],
                "message": record["message"],
            }
    return {
        "event": "snapshot",
        "run_id": manifest.run_id,
        "stages": {name: dict(state) for name, state in manifest.stages.items()},
        "progress": progress,
        "last_seq": events[-1]["seq"] if events else 0,
        "terminal": is_terminal(manifest),
    }


def stream_progress(
    run_id: str,
    root: str | Path | None = None,
    follow: bool = False,
    poll: float = 0.2,
    max_wait: float | None = None,
) -> Iterator[dict]:
    """Yield a snapshot, then (with ``follow``) each new event as it lands.

    Event sequence numbers are strictly increasing and counters never move
    backwards. Subscribing to an already-terminal run yields the snapshot
    alone. The stream ends when the run terminates (all stages done or one
    failed) or after ``max_wait`` seconds of following.
    """
    manifest = load_manifest(run_id, root)
    snap = snapshot_event(manifest, root)
    yield snap
    if not follow or snap["terminal"]:
        return
    directory = run_dir(run_id, root)
    last_seq = snap["last_seq"]
    deadline = None if max_wait is None else time.monotonic() + max_wait
    while True:
        for record in read_events(directory / EVENTS_NAME, after_seq=last_seq):
            last_seq = record["seq"]
            yield record
        manifest = load_manifest(run_id, root)
        if is_terminal(manifest) and not read_events(directory / EVENTS_NAME, after_seq=last_seq):
            return
        if deadline is not None and time.monotonic() > deadline:
            return
        time.sleep(poll)
