"""Plot the plot-data CSVs of a study output directory (needs matplotlib).

    python3 scripts/plot_results.py runs/fixture

Writes lorenz.png, beta_sweep.png, scatter_ndcg_ia.png, scatter_ndcg_ee.png
and timing.png next to the CSVs; files that are missing are skipped.
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def rows(path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def lorenz(out, data):
    x = [float(r["item_fraction"]) for r in data]
    y = [float(r["cumulative_rating_fraction"]) for r in data]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(x, y, label="ratings")
    ax.plot([0, 1], [0, 1], "k--", lw=0.8, label="equality")
    ax.set(xlabel="fraction of items (most popular first)", ylabel="cumulative fraction of ratings")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "lorenz.png", dpi=150)


def beta_sweep(out, data):
    beta = [float(r["beta"]) for r in data]
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.2))
    for ax, metric in zip(axes, ("precision", "ndcg", "ia@1", "ee")):
        ax.plot(beta, [float(r[metric]) for r in data], marker="o")
        ax.set(xlabel="beta", ylabel=metric)
    fig.tight_layout()
    fig.savefig(out / "beta_sweep.png", dpi=150)


def scatter(out, data, metric, name):
    groups = defaultdict(list)
    for r in data:
        groups[(r["input"], r["N"])].append(r)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for (kind, N), pts in sorted(groups.items()):
        marker = "o" if kind == "raw" else "^"
        ax.scatter([float(p[metric]) for p in pts], [float(p["ndcg"]) for p in pts], marker=marker,
                   label=f"{kind} N={N}")
        for p in pts:
            ax.annotate(p["method"], (float(p[metric]), float(p["ndcg"])), fontsize=6)
    ax.set(xlabel=metric, ylabel="nDCG")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / name, dpi=150)


def timing(out, data):
    series = defaultdict(list)
    for r in data:
        series[(r["input"], r["method"])].append((int(r["N"]), float(r["runtime_seconds"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (kind, method), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ls="-" if kind == "raw" else "--",
                label=f"{method} ({kind})")
    ax.set(xlabel="initial list length N", ylabel="rerank time (s)", yscale="log")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(out / "timing.png", dpi=150)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__, file=sys.stderr)
        return 1
    out = Path(argv[0])
    jobs = {
        "lorenz.csv": lorenz,
        "beta_sweep.csv": beta_sweep,
        "scatter_ndcg_ia.csv": lambda o, d: scatter(o, d, "ia@1", "scatter_ndcg_ia.png"),
        "scatter_ndcg_ee.csv": lambda o, d: scatter(o, d, "ee", "scatter_ndcg_ee.png"),
        "timing.csv": timing,
    }
    for name, fn in jobs.items():
        path = out / name
        if path.exists():
            fn(out, rows(path))
            print(f"plotted {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
