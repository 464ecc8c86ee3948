"""Command-line entry point. Each subcommand wraps a library function of the same name.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 run failure
(partial results may have been written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bias import diagnose as diagnose_matrix
from .bias import segment_head_tail, write_diagnostics
from .data import DataError, RatingMatrix, filter_kcore, load_ratings, split_per_user, write_ratings, write_remap
from .harness import (
    ConfigError,
    StudyFailure,
    load_config,
    run_simulation_sweep,
    run_study,
    transform_input,
)
from .metrics import append_results, evaluate as evaluate_lists
from .recommenders import ModelConfig, TrainingError, load_model, recommend as recommend_model, save_model, train
from .recset import RecommendationSet
from .rerankers import FlowError, RerankConfig, RerankContext, RerankError, rerank as rerank_lists

log = logging.getLogger("multibias")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3


# library functions -----------------------------------------------------------


def ingest(input_path, out, delimiter="\t", header=False, min_user_ratings=1, min_item_ratings=1,
           split_ratio=0.8, seed=0) -> dict:
    """Load, k-core filter and split a ratings file into a dataset directory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = load_ratings(input_path, delimiter=delimiter, header=header)
    if min_user_ratings > 1 or min_item_ratings > 1:
        matrix = filter_kcore(matrix, min_user_ratings, min_item_ratings)
    split = split_per_user(matrix, split_ratio, seed)
    write_ratings(matrix, out / "ratings.tsv")
    write_ratings(split.train, out / "train.tsv")
    write_ratings(split.test, out / "test.tsv")
    write_remap(matrix, out)
    summary = dict(users=matrix.n_users, items=matrix.n_items, ratings=matrix.nnz,
                   density=matrix.nnz / (matrix.n_users * matrix.n_items),
                   scale=list(matrix.scale.levels), split_ratio=split_ratio, split_seed=seed,
                   train=split.train.nnz, test=split.test.nnz, fingerprint=matrix.fingerprint())
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def load_dataset(data_dir) -> tuple[RatingMatrix, RatingMatrix, RatingMatrix]:
    """(all ratings, train, test) of an ingested directory with one shared id map."""
    d = Path(data_dir)
    full = load_ratings(d / "ratings.tsv")
    return full, load_ratings(d / "train.tsv", reference=full), load_ratings(d / "test.tsv", reference=full)


def diagnose(data_dir, out, head_fraction=0.2) -> dict:
    """Lorenz curve, rating histogram, item statistics and head/tail split."""
    full, train_m, _ = load_dataset(data_dir)
    diag = diagnose_matrix(full)
    write_diagnostics(diag, out, full)
    seg = segment_head_tail(train_m, head_fraction)
    info = dict(head=sorted(full.external_item(i) for i in seg.head), coverage=seg.coverage,
                head_items=len(seg.head), tail_items=len(seg.tail), rating_histogram=diag.rating_histogram)
    (Path(out) / "segmentation.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    return info


def transform(data_dir, out, kind="percentile", beta=None) -> Path:
    """Write the training split after the percentile or flip transform."""
    _, train_m, _ = load_dataset(data_dir)
    data = transform_input(train_m, kind, beta)
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ratings(data, path)
    return path


def train_model(data_dir, out, config: ModelConfig, input_kind="raw", beta=None):
    _, train_m, _ = load_dataset(data_dir)
    model = train(config, transform_input(train_m, input_kind, beta))
    save_model(model, out)
    return model


def recommend(data_dir, model_path, K, out) -> RecommendationSet:
    full, _, _ = load_dataset(data_dir)
    model = load_model(model_path)
    recs = recommend_model(model, K)
    recs.write(out, full)
    return recs


def rerank(data_dir, recs_path, config: RerankConfig, out, head_fraction=0.2) -> RecommendationSet:
    full, train_m, _ = load_dataset(data_dir)
    initial = RecommendationSet.read(recs_path, full.n_users, full.n_items, full)
    ctx = RerankContext(segment_head_tail(train_m, head_fraction), train_m)
    result = rerank_lists(initial, config, ctx)
    result.write(out, full)
    notes = {k: v for k, v in result.notes.items() if k != "flagged_users"}
    notes["flagged_users"] = [full.external_user(u) for u in result.notes.get("flagged_users", [])]
    Path(str(out) + ".notes.json").write_text(json.dumps(notes, indent=2) + "\n", encoding="utf-8")
    return result


def evaluate(data_dir, recs_path, out=None, alphas=(1,), head_fraction=0.2, results=None, **labels):
    full, train_m, test_m = load_dataset(data_dir)
    recs = RecommendationSet.read(recs_path, full.n_users, full.n_items, full)
    tail = sorted(segment_head_tail(train_m, head_fraction).tail)
    report = evaluate_lists(recs, test_m, tail, alphas, dataset=full.fingerprint(), **labels)
    if out is not None:
        Path(out).write_text(report.to_json() + "\n", encoding="utf-8")
    if results is not None:
        append_results(results, [report])
    return report


def simulate(config_path, out, jobs=1, seed=None):
    cfg = load_config(config_path)
    cfg = cfg.with_seed(seed) if seed is not None else cfg
    return run_simulation_sweep(cfg, out, jobs)


def study(config_path, out, jobs=1, seed=None):
    cfg = load_config(config_path)
    cfg = cfg.with_seed(seed) if seed is not None else cfg
    return run_study(cfg, out, jobs)


# argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _model_config(args) -> ModelConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        base = base.get("pipeline", {}).get("model", base)
    for key in ("algorithm", "factors", "iterations", "learning_rate", "regularization",
                "neighbors", "shrinkage", "confidence_alpha"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    if args.seed is not None:
        base["seed"] = args.seed
    return ModelConfig.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int, help="override every seed")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for independent cells")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = _Parser(prog="multibias", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="load, filter and split a ratings file")
    s.add_argument("input")
    s.add_argument("--delimiter", default="\t", help=r"field separator (default tab; 'ws' for any whitespace)")
    s.add_argument("--header", action="store_true")
    s.add_argument("--min-user-ratings", type=int, default=1)
    s.add_argument("--min-item-ratings", type=int, default=1)
    s.add_argument("--split-ratio", type=float, default=0.8)

    s = sub.add_parser("diagnose", parents=[common], help="bias diagnostics of an ingested dataset")
    s.add_argument("data")
    s.add_argument("--head-fraction", type=float, default=0.2)

    s = sub.add_parser("transform", parents=[common], help="write the transformed training split")
    s.add_argument("data")
    s.add_argument("--kind", choices=["percentile", "flip"], default="percentile")
    s.add_argument("--beta", type=float)

    s = sub.add_parser("train", parents=[common], help="train a model checkpoint")
    s.add_argument("data")
    s.add_argument("--input", choices=["raw", "percentile", "flip"], default="raw")
    s.add_argument("--beta", type=float)
    s.add_argument("--algorithm")
    for name, typ in (("factors", int), ("iterations", int), ("learning-rate", float),
                      ("regularization", float), ("neighbors", int), ("shrinkage", float),
                      ("confidence-alpha", float)):
        s.add_argument(f"--{name}", type=typ)

    s = sub.add_parser("recommend", parents=[common], help="top-K lists from a checkpoint")
    s.add_argument("data")
    s.add_argument("model")
    s.add_argument("-K", type=int, default=10)

    s = sub.add_parser("rerank", parents=[common], help="rerank initial lists to top-K")
    s.add_argument("data")
    s.add_argument("recs")
    s.add_argument("--method", required=True)
    s.add_argument("-K", type=int, default=10)
    s.add_argument("--lam", type=float, default=0.5)
    s.add_argument("--p", type=float)
    s.add_argument("--a-sig", type=float, default=0.1)
    s.add_argument("--iterations", type=int, default=5)
    s.add_argument("--head-fraction", type=float, default=0.2)

    s = sub.add_parser("evaluate", parents=[common], help="accuracy and exposure metrics of a list file")
    s.add_argument("data")
    s.add_argument("recs")
    s.add_argument("--alphas", type=int, nargs="+", default=[1])
    s.add_argument("--results", help="append flat rows to this CSV")
    s.add_argument("--head-fraction", type=float, default=0.2)

    sub.add_parser("simulate", parents=[common], help="beta-flip simulation sweep from --config")
    sub.add_parser("study", parents=[common], help="every study listed in --config")
    return p


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ConfigError(f"{args.command}: --{n.replace('_', '-')} is required")


def dispatch(args) -> None:
    cmd = args.command
    if cmd == "ingest":
        _require(args, "out")
        delim = None if args.delimiter == "ws" else args.delimiter.encode().decode("unicode_escape")
        summary = ingest(args.input, args.out, delim, args.header, args.min_user_ratings,
                         args.min_item_ratings, args.split_ratio, args.seed or 0)
        print(json.dumps(summary, indent=2))
    elif cmd == "diagnose":
        _require(args, "out")
        info = diagnose(args.data, args.out, args.head_fraction)
        print(f"head items: {info['head_items']}, tail items: {info['tail_items']}, "
              f"head coverage: {info['coverage']:.3f}")
    elif cmd == "transform":
        _require(args, "out")
        if args.kind == "flip" and args.beta is None:
            raise ConfigError("transform --kind flip needs --beta")
        print(transform(args.data, args.out, args.kind, args.beta))
    elif cmd == "train":
        _require(args, "out")
        if args.input == "flip" and args.beta is None:
            raise ConfigError("train --input flip needs --beta")
        try:
            cfg = _model_config(args)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        train_model(args.data, args.out, cfg, args.input, args.beta)
        print(f"trained {cfg.label()} on {args.input} input; checkpoint {args.out}")
    elif cmd == "recommend":
        _require(args, "out")
        recs = recommend(args.data, args.model, args.K, args.out)
        print(f"{recs.n_users} lists of length {recs.K}; {len(recs.short_users)} short")
    elif cmd == "rerank":
        _require(args, "out")
        try:
            cfg = RerankConfig(args.method, K=args.K, lam=args.lam, p=args.p, a_sig=args.a_sig,
                               iterations=args.iterations, seed=args.seed or 0)
        except RerankError as exc:
            raise ConfigError(str(exc)) from None
        result = rerank(args.data, args.recs, cfg, args.out, args.head_fraction)
        print(f"{cfg.method}: {len(result.notes.get('flagged_users', []))} flagged users")
    elif cmd == "evaluate":
        report = evaluate(args.data, args.recs, args.out, tuple(args.alphas), args.head_fraction, args.results)
        for name, value in report.metric_items():
            print(f"{name}\t{value:.6g}")
    elif cmd in ("simulate", "study"):
        _require(args, "config", "out")
        fn = simulate if cmd == "simulate" else study
        fn(args.config, args.out, args.jobs, args.seed)
        print(f"results written to {args.out}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"multibias: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except (ConfigError, RerankError) as exc:
        print(f"multibias: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"multibias: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StudyFailure, TrainingError, FlowError) as exc:
        print(f"multibias: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
