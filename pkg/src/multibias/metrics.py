"""Accuracy and exposure-fairness metrics over recommendation lists."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .recset import RecommendationSet

__all__ = [
    "MetricReport",
    "UndefinedMetric",
    "precision_at_k",
    "ndcg_at_k",
    "item_aggregate_diversity",
    "exposure",
    "equality_of_exposure",
    "relative_gain",
    "evaluate",
    "RESULT_COLUMNS",
    "RUNTIME_METRICS",
    "append_results",
]

RESULT_COLUMNS = ["pipeline", "algorithm", "input", "N", "K", "metric", "value", "dataset", "config", "seed"]
RUNTIME_METRICS = ("runtime_seconds",)


class UndefinedMetric(ValueError):
    """A metric whose denominator is empty or zero."""


def _test_sets(test) -> list[set[int]]:
    return [set(x.tolist()) for x in test.user_items()]


def _accuracy(recs: RecommendationSet, test, per_user):
    truth = _test_sets(test)
    vals = []
    for u in range(recs.n_users):
        if u >= len(truth) or not truth[u]:
            continue
        vals.append(per_user(recs.list_for(u), truth[u]))
    if not vals:
        return 0.0, recs.n_users
    return math.fsum(vals) / len(vals), recs.n_users - len(vals)


def precision_at_k(recs: RecommendationSet, test) -> float:
    """Mean over users with test data of hits / K."""
    if recs.K <= 0:
        raise ValueError("K must be positive")
    K = recs.K
    return _accuracy(recs, test, lambda lst, t: sum(i in t for i in lst) / K)[0]


def _ndcg_user(lst, truth, K):
    dcg = math.fsum(1.0 / math.log2(pos + 2) for pos, i in enumerate(lst) if i in truth)
    idcg = math.fsum(1.0 / math.log2(pos + 2) for pos in range(min(K, len(truth))))
    return dcg / idcg


def ndcg_at_k(recs: RecommendationSet, test) -> float:
    """Binary-relevance nDCG@K, averaged over users with test data."""
    if recs.K <= 0:
        raise ValueError("K must be positive")
    K = recs.K
    return _accuracy(recs, test, lambda lst, t: _ndcg_user(lst, t, K))[0]


def item_aggregate_diversity(recs: RecommendationSet, alpha: int = 1,
                             restrict: Iterable[int] | None = None) -> float:
    """Fraction of the reference items appearing in at least ``alpha`` lists.

    With ``restrict`` set to the tail items this is long-tail aggregate
    diversity (LIA).
    """
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    counts = recs.appearances()
    if restrict is None:
        ref = np.arange(recs.n_items)
    else:
        ref = np.fromiter(restrict, dtype=np.int64)
        if ref.size == 0:
            raise UndefinedMetric("restricted item set is empty")
    return float((counts[ref] >= alpha).sum() / ref.size)


def exposure(recs: RecommendationSet) -> np.ndarray:
    """Share of all ``|U| * K`` recommendation slots taken by each item."""
    return recs.appearances() / (recs.n_users * recs.K)


def gini(values: np.ndarray) -> float:
    m = len(values)
    if m < 2:
        raise UndefinedMetric("Gini needs at least two items")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    k = np.arange(1, m + 1)
    return math.fsum(((2 * k - m - 1) * ordered).tolist()) / (m - 1)


def equality_of_exposure(recs: RecommendationSet) -> tuple[float, float]:
    """Return ``(gini, ee)`` of the item exposure distribution, ``ee = 1 - gini``."""
    g = gini(exposure(recs))
    return g, 1.0 - g


def relative_gain(utility_a: float, utility_b: float) -> float:
    """Percentage improvement of ``utility_a`` over ``utility_b``."""
    if utility_b == 0:
        raise UndefinedMetric("relative gain against a zero baseline is undefined")
    return (utility_a - utility_b) / utility_b * 100.0


@dataclass
class MetricReport:
    precision: float
    ndcg: float
    ia: dict[int, float]
    lia: dict[int, float]
    ee: float
    gini: float
    runtime_seconds: float | None = None
    labels: dict = field(default_factory=dict)

    def metric_items(self) -> list[tuple[str, float]]:
        out = [("precision", self.precision), ("ndcg", self.ndcg)]
        out += [(f"ia@{a}", v) for a, v in sorted(self.ia.items())]
        out += [(f"lia@{a}", v) for a, v in sorted(self.lia.items())]
        out += [("ee", self.ee), ("gini", self.gini)]
        if self.runtime_seconds is not None:
            out.append(("runtime_seconds", self.runtime_seconds))
        return out

    def get(self, name: str) -> float:
        return dict(self.metric_items())[name]

    def rows(self) -> list[list]:
        lab = self.labels
        head = [lab.get("pipeline", ""), lab.get("algorithm", ""), lab.get("input", ""),
                lab.get("N", ""), lab.get("K", "")]
        tail = [lab.get("dataset", ""), lab.get("config", ""), lab.get("seed", "")]
        return [head + [name, value] + tail for name, value in self.metric_items()]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ia"] = {str(k): v for k, v in self.ia.items()}
        d["lia"] = {str(k): v for k, v in self.lia.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        d = dict(d)
        d["ia"] = {int(k): v for k, v in d["ia"].items()}
        d["lia"] = {int(k): v for k, v in d["lia"].items()}
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(recs: RecommendationSet, test, tail: Iterable[int] | None = None,
             alphas: Iterable[int] = (1,), runtime: float | None = None, **labels) -> MetricReport:
    """All metrics for one set of lists. LIA is NaN when ``tail`` is empty."""
    alphas = sorted(set(alphas))
    tail = list(tail) if tail is not None else []
    g, ee = equality_of_exposure(recs)
    lia = {a: (item_aggregate_diversity(recs, a, tail) if tail else float("nan")) for a in alphas}
    precision, excluded = _accuracy(recs, test, lambda lst, t: sum(i in t for i in lst) / recs.K)
    labels.setdefault("K", recs.K)
    labels["users_without_test"] = excluded
    return MetricReport(
        precision=precision,
        ndcg=ndcg_at_k(recs, test),
        ia={a: item_aggregate_diversity(recs, a) for a in alphas},
        lia=lia,
        ee=ee,
        gini=g,
        runtime_seconds=runtime,
        labels=labels,
    )


def append_results(path: str | Path, reports: Iterable[MetricReport]):
    """Append flat rows in :data:`RESULT_COLUMNS` order; the last three are provenance."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_COLUMNS)
        for rep in reports:
            w.writerows(rep.rows())
