"""Command-line entry points for the adversarial-benchmark workbench.

Subcommands cover the standalone building blocks (train, attack, filter,
annotate, evaluate) and the managed pipeline (run, resume). Standalone
commands read and write plain files; the pipeline commands work on run
directories under the root given by --root or ADVFORGE_RUN_ROOT.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import yaml

from . import __version__
from .attacks import (
    STATUS_SUCCESS,
    AttackConfig,
    ContextualProvider,
    EmbeddingProvider,
    RemoteContextualProvider,
    VisualProvider,
    attack_item,
    aggregate_stats,
    read_candidates,
)
from .curation import (
    CurationResources,
    FilterCriterion,
    apply_filter,
    compute_metrics,
    load_benchmark,
    simulate_annotators,
    write_rejection_report,
)
from .evaluation import evaluate, render_text_table, save_report
from .pipeline import (
    ENV_RUN_ROOT,
    STAGES,
    ArtifactMismatchError,
    ConfigError,
    ConflictError,
    PrerequisiteError,
    SESSION_NAME,
    create_run,
    execute_stage,
    load_manifest,
    load_session,
    run_dir,
    save_session,
)
from .textcore import (
    EmbeddingTable,
    GRANULARITIES,
    SegmentationConfig,
    VisualSimilarityTable,
)
from .victim import (
    Dataset,
    LocalClassifier,
    RemoteClassifier,
    TrainConfig,
    clean_accuracy,
    load_records,
)

DEFAULT_DELIMITERS = ["་", "།"]


def _read_records(path: str):
    with open(path, encoding="utf-8") as fp:
        return load_records(fp)


def _load_table(path: str | None, table_cls):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fp:
        return table_cls.load(fp)


def _segmentation(args) -> SegmentationConfig:
    return SegmentationConfig(
        delimiters=frozenset(args.delimiters), granularity=args.granularity
    )


def _load_classifier(spec: str):
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteClassifier(spec)
    return LocalClassifier.load(spec)


def cmd_train(args) -> int:
    train_records = _read_records(args.train)
    test_records = _read_records(args.test) if args.test else []
    dataset = Dataset.from_splits(args.name, train_records, test_records)
    cfg = TrainConfig(
        ngram_orders=tuple(args.ngram_orders),
        feature_dim=args.feature_dim,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=args.seed,
        segmentation=_segmentation(args),
    )
    from .victim import train as train_model

    classifier = train_model(dataset, cfg)
    classifier.save(args.out)
    print(f"trained {dataset.name}: {len(dataset.label_set)} labels, "
          f"{len(train_records)} records")
    if test_records:
        print(f"clean accuracy: {clean_accuracy(classifier, test_records):.4f}")
    print(f"wrote {args.out}")
    return 0


def _build_provider(args, records, seg: SegmentationConfig):
    if args.provider == "embedding":
        if args.embedding_table is None:
            raise ValueError("--provider embedding needs --embedding-table")
        table = _load_table(args.embedding_table, EmbeddingTable)
        return EmbeddingProvider(table, k=args.k, min_sim=args.min_sim)
    if args.provider == "visual":
        if args.visual_table is None:
            raise ValueError("--provider visual needs --visual-table")
        table = _load_table(args.visual_table, VisualSimilarityTable)
        return VisualProvider(table, k=args.k)
    if args.endpoint:
        return RemoteContextualProvider(args.endpoint, k=args.k)
    corpus = _read_records(args.context_texts) if args.context_texts else records
    return ContextualProvider.from_texts([r.text for r in corpus], seg, args.k)


def cmd_attack(args) -> int:
    classifier = _load_classifier(args.model)
    records = _read_records(args.data)
    seg = (
        classifier.config.segmentation
        if isinstance(classifier, LocalClassifier)
        else _segmentation(args)
    )
    provider = _build_provider(args, records, seg)
    cfg = AttackConfig(
        provider=provider,
        granularity=seg,
        max_perturb_fraction=args.max_perturb_fraction,
        query_budget=args.query_budget,
    )
    resources = CurationResources(
        embedding_table=_load_table(args.embedding_table, EmbeddingTable),
        visual_table=_load_table(args.visual_table, VisualSimilarityTable),
        segmentation=seg,
    )
    name = args.attack_name or args.provider
    candidates = []
    with open(args.out, "w", encoding="utf-8") as fp:
        for index, item in enumerate(records):
            cand = attack_item(
                classifier,
                item,
                cfg,
                seed=args.seed,
                dataset=args.dataset,
                index=index,
                attack_name=name,
            )
            if cand.status == STATUS_SUCCESS:
                cand = compute_metrics(cand, resources)
            candidates.append(cand)
            fp.write(cand.to_json_line() + "\n")
            fp.flush()
    stats = aggregate_stats(candidates)
    print(f"attacked {len(records)} items: {stats.successes} flips, "
          f"{stats.failures} failures, {stats.skipped} skipped")
    print(f"wrote {args.out}")
    return 0


_CRITERION = re.compile(r"^([A-Za-z0-9_.-]+)(<=|>=)(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)$")


def _parse_criterion(text: str) -> FilterCriterion:
    match = _CRITERION.match(text)
    if not match:
        raise ValueError(
            f"bad criterion {text!r}; expected metric<=threshold or metric>=threshold"
        )
    return FilterCriterion(match.group(1), match.group(2), float(match.group(3)))


def cmd_filter(args) -> int:
    with open(args.candidates, encoding="utf-8") as fp:
        candidates = read_candidates(fp)
    criteria = [_parse_criterion(c) for c in args.criterion] or [
        FilterCriterion("edit_ratio", "<=", args.max_edit_ratio)
    ]
    result = apply_filter(candidates, criteria)
    with open(args.out, "w", encoding="utf-8") as fp:
        for cand in result.kept:
            fp.write(cand.to_json_line() + "\n")
    if args.rejects:
        with open(args.rejects, "w", encoding="utf-8") as fp:
            write_rejection_report(result.dropped, fp)
    print(f"kept {len(result.kept)} of {len(candidates)} candidates")
    print(f"wrote {args.out}")
    return 0


def cmd_annotate_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(root=args.root, token=args.token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_annotate_simulate(args) -> int:
    session = load_session(args.session)
    simulate_annotators(
        session, seed=args.seed, r5=args.r5, r4=args.r4, jitter_p=args.jitter_p
    )
    save_session(session, args.session)
    progress = session.progress()
    print(f"session {session.id}: {progress['accepted']} accepted, "
          f"{progress['rejected']} rejected, {progress['pending']} pending")
    return 0


def _parse_model_args(values: list[str]):
    named = [v for v in values if "=" in v]
    if named and len(named) != len(values):
        raise ValueError("mix of named (dataset=path) and bare model arguments")
    if not named:
        if len(values) != 1:
            raise ValueError("give one bare model or dataset=path pairs")
        return _load_classifier(values[0])
    mapping = {}
    for value in named:
        dataset, _, path = value.partition("=")
        mapping[dataset] = _load_classifier(path)
    return mapping


def cmd_evaluate(args) -> int:
    with open(args.benchmark, encoding="utf-8") as fp:
        benchmark = load_benchmark(fp)
    classifiers = _parse_model_args(args.model)
    clean_splits = None
    if args.clean:
        clean_splits = {}
        for value in args.clean:
            dataset, _, path = value.partition("=")
            if not path:
                raise ValueError(f"bad --clean {value!r}; expected dataset=path")
            clean_splits[dataset] = _read_records(path)
    report = evaluate(classifiers, benchmark, clean_splits, model=args.model_name)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            save_report(report, fp)
        print(f"wrote {args.out}")
    print(render_text_table(report))
    return 0


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        loaded = yaml.safe_load(text)
    else:
        loaded = json.loads(text)
    if not isinstance(loaded, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return loaded


def _print_stage_line(manifest, stage: str) -> None:
    state = manifest.stages[stage]
    line = f"  {stage}: {state['status']}"
    if state.get("error"):
        line += f" ({state['error']})"
    print(line)


def _execute_stages(run_id: str, root, stages=STAGES) -> int:
    """Run the given stages in order, stopping cleanly when curate is
    waiting on manual annotation."""
    manifest = load_manifest(run_id, root)
    for stage in stages:
        if manifest.status(stage) == "done":
            _print_stage_line(manifest, stage)
            continue
        manifest = execute_stage(run_id, stage, root=root)
        _print_stage_line(manifest, stage)
        if stage == "curate" and manifest.status(stage) != "done":
            session = load_session(run_dir(run_id, root) / SESSION_NAME)
            pending = session.progress()["pending"]
            print(f"annotation session {session.id}: {pending} candidates pending")
            print("score them through the annotation API (advforge annotate serve),")
            print(f"then continue with: advforge resume {run_id}")
            return 0
    manifest = load_manifest(run_id, root)
    if all(manifest.status(s) == "done" for s in STAGES):
        report_path = run_dir(run_id, root) / "report.txt"
        if report_path.is_file():
            print()
            print(report_path.read_text(encoding="utf-8"))
    return 0


def cmd_run(args) -> int:
    raw = _load_config_file(args.config)
    raw["seed"] = args.seed
    manifest = create_run(raw, root=args.root)
    print(f"created run {manifest.run_id}")
    return _execute_stages(manifest.run_id, args.root)


def cmd_resume(args) -> int:
    manifest = load_manifest(args.run_id, args.root)
    remaining = [s for s in STAGES if manifest.status(s) != "done"]
    if not remaining:
        print(f"run {args.run_id}: all stages done")
        return 0
    return _execute_stages(args.run_id, args.root, stages=tuple(remaining))


def _add_segmentation_flags(parser) -> None:
    parser.add_argument(
        "--delimiters",
        nargs="+",
        default=DEFAULT_DELIMITERS,
        help="unit separator characters (default: Tibetan tsheg and shad)",
    )
    parser.add_argument(
        "--granularity", choices=GRANULARITIES, default="syllable",
        help="perturbation unit (default: syllable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advforge",
        description="build and evolve adversarial-text robustness benchmarks",
    )
    parser.add_argument("--version", action="version", version=f"advforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a victim classifier on a JSONL split")
    p_train.add_argument("--train", required=True, help="training split (JSONL)")
    p_train.add_argument("--test", help="held-out split for a clean-accuracy report")
    p_train.add_argument("--name", default="dataset", help="dataset name")
    p_train.add_argument("--out", required=True, help="model artifact path")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--epochs", type=int, default=10)
    p_train.add_argument("--learning-rate", type=float, default=0.1)
    p_train.add_argument("--feature-dim", type=int, default=2**18)
    p_train.add_argument("--ngram-orders", type=int, nargs="+", default=[1, 2])
    _add_segmentation_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_attack = sub.add_parser("attack", help="generate adversarial candidates")
    p_attack.add_argument("--model", required=True,
                          help="model artifact path, or http(s) URL of a remote victim")
    p_attack.add_argument("--data", required=True, help="records to attack (JSONL)")
    p_attack.add_argument("--dataset", default="dataset", help="dataset name for records")
    p_attack.add_argument("--out", required=True, help="candidate file to write (JSONL)")
    p_attack.add_argument("--provider", required=True,
                          choices=("embedding", "visual", "contextual"))
    p_attack.add_argument("--endpoint", help="remote contextual-provider URL")
    p_attack.add_argument("--k", type=int, default=4, help="proposals per position")
    p_attack.add_argument("--min-sim", type=float, default=0.0,
                          help="embedding cosine floor")
    p_attack.add_argument("--embedding-table", help="embedding table (JSON)")
    p_attack.add_argument("--visual-table", help="visual-similarity table (JSON)")
    p_attack.add_argument("--context-texts",
                          help="corpus for the contextual index (default: --data)")
    p_attack.add_argument("--max-perturb-fraction", type=float, default=1.0)
    p_attack.add_argument("--query-budget", type=int, default=2000)
    p_attack.add_argument("--attack-name", help="name recorded on candidates")
    p_attack.add_argument("--seed", type=int, default=0)
    _add_segmentation_flags(p_attack)
    p_attack.set_defaults(func=cmd_attack)

    p_filter = sub.add_parser("filter", help="filter candidates by quality metrics")
    p_filter.add_argument("--candidates", required=True, help="candidate file (JSONL)")
    p_filter.add_argument("--out", required=True, help="kept candidates (JSONL)")
    p_filter.add_argument("--rejects", help="rejection report (JSONL)")
    p_filter.add_argument("--max-edit-ratio", type=float, default=0.1,
                          help="default criterion when no --criterion is given")
    p_filter.add_argument("--criterion", action="append", default=[],
                          help="metric<=x or metric>=x; repeatable")
    p_filter.set_defaults(func=cmd_filter)

    p_annotate = sub.add_parser("annotate", help="annotation session commands")
    annotate_sub = p_annotate.add_subparsers(dest="annotate_command", required=True)

    p_serve = annotate_sub.add_parser(
        "serve", help="serve the HTTP API (pipeline control + annotation)"
    )
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8940)
    p_serve.add_argument("--root", help=f"run-directory root (default: ${ENV_RUN_ROOT})")
    p_serve.add_argument("--token", help="require this x-api-token header value")
    p_serve.set_defaults(func=cmd_annotate_serve)

    p_sim = annotate_sub.add_parser(
        "simulate", help="score a session's pending assignments with simulated annotators"
    )
    p_sim.add_argument("--session", required=True, help="session store (JSON)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--r5", type=float, default=0.03,
                       help="edit-ratio ceiling for score 5")
    p_sim.add_argument("--r4", type=float, default=0.1,
                       help="edit-ratio ceiling for score 4")
    p_sim.add_argument("--jitter-p", type=float, default=0.1,
                       help="probability of a one-step score perturbation")
    p_sim.set_defaults(func=cmd_annotate_simulate)

    p_eval = sub.add_parser("evaluate", help="score a model on a benchmark")
    p_eval.add_argument("--benchmark", required=True, help="benchmark file (JSONL)")
    p_eval.add_argument("--model", action="append", required=True,
                        help="model path/URL, or dataset=path per subset; repeatable")
    p_eval.add_argument("--clean", action="append", default=[],
                        help="dataset=path of a clean split for degradation; repeatable")
    p_eval.add_argument("--model-name", default="victim", help="label used in the report")
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_run = sub.add_parser("run", help="create a run and execute the full pipeline")
    p_run.add_argument("--config", required=True, help="run config (JSON or YAML)")
    p_run.add_argument("--seed", type=int, required=True,
                       help="run seed (overrides the config file)")
    p_run.add_argument("--root", help=f"run-directory root (default: ${ENV_RUN_ROOT})")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="continue a run's unfinished stages")
    p_resume.add_argument("run_id")
    p_resume.add_argument("--root", help=f"run-directory root (default: ${ENV_RUN_ROOT})")
    p_resume.set_defaults(func=cmd_resume)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for error in exc.errors:
            print(f"  {error}", file=sys.stderr)
        return 1
    except (
        ArtifactMismatchError,
        ConflictError,
        PrerequisiteError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
