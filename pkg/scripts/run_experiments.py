"""Run the studies of a config document and print their headline tables.

    python3 scripts/run_experiments.py --config scripts/configs/fixture_study.json --out runs/fixture
    python3 scripts/run_experiments.py --config ... --out ... --study reranker --seed 3

Outputs land in --out (results.csv, per-study JSON reports, plot-data CSVs).
"""
import argparse
import logging
import sys
from dataclasses import replace

from scipy.stats import spearmanr

from multibias.harness import STUDIES, ConfigError, StudyFailure, load_config, run_study


def summarize(name, report):
    if name == "simulation":
        betas = [r.labels["beta"] for r in report.reports]
        for metric in ("ee", "precision", "ndcg"):
            vals = [r.get(metric) for r in report.reports]
            print(f"  spearman(beta, {metric}) = {spearmanr(betas, vals)[0]:+.3f}")
    elif name == "comparison":
        for g in report.gains:
            if g["metric"] in ("ndcg", "ia@1", "lia@1", "ee"):
                print(f"  {g['algorithm']:<10} {g['metric']:<6} raw {g['rating']:.4f}  "
                      f"percentile {g['percentile']:.4f}  gain {g['gain']:+.2f}%")
    elif name == "reranker":
        for g in report.gains:
            print(f"  {g['method']:<10} {g['metric']:<16} percentile@{g['percentile_N']} {g['percentile']:.4f}  "
                  f"rating@{g['rating_N']} {g['rating']:.4f}  gain {g['gain']:+.2f}%")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--study", choices=[*STUDIES, "all"], default="all")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.study != "all":
            cfg = replace(cfg, studies=(args.study,))
        reports = run_study(cfg, args.out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StudyFailure as exc:
        print(f"run failed (partial results in {args.out}): {exc}", file=sys.stderr)
        return 3
    for name, report in reports.items():
        print(f"\n{name} (config {report.provenance['config_hash']}, dataset {report.provenance['dataset']})")
        summarize(name, report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
