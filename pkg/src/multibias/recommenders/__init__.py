"""Rating-based recommenders: training, top-K lists and grid search."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..metrics import MetricReport, evaluate
from ..recset import RecommendationSet
from .base import (
    ALGORITHMS,
    ModelConfig,
    TrainedModel,
    TrainingError,
    load_model,
    recommend,
    save_model,
)
from .knn import train_itemknn, train_userknn
from .listrank import train_listrank
from .mf import train_biasedmf, train_svdpp
from .wrmf import train_wrmf

__all__ = [
    "ALGORITHMS",
    "ModelConfig",
    "TrainedModel",
    "TrainingError",
    "train",
    "recommend",
    "save_model",
    "load_model",
    "expand_grid",
    "FULL_KNN_GRID",
    "FULL_MF_GRID",
    "GridResult",
    "grid_search",
]

log = logging.getLogger(__name__)

_TRAINERS = {
    "BiasedMF": train_biasedmf,
    "SVDpp": train_svdpp,
    "WRMF": train_wrmf,
    "ListRankMF": train_listrank,
    "UserKNN": train_userknn,
    "ItemKNN": train_itemknn,
}

FULL_KNN_GRID = dict(shrinkage=[50, 100, 200], neighbors=[10, 20, 30, 50, 70, 100, 200])
FULL_MF_GRID = dict(
    factors=[30, 50, 100, 200],
    iterations=[30, 50, 100, 150, 200],
    learning_rate=[0.0001, 0.001, 0.01],
)


def train(config: ModelConfig, train_data) -> TrainedModel:
    """Fit ``config.algorithm`` on a rating or percentile matrix."""
    model = _TRAINERS[config.algorithm](config, train_data)
    ucount = np.bincount(model.params["train_users"], minlength=model.n_users)
    icount = np.bincount(model.params["train_items"], minlength=model.n_items)
    model.notes["cold_users"] = int((ucount == 0).sum())
    model.notes["cold_items"] = int((icount == 0).sum())
    return model


def expand_grid(base: ModelConfig, **axes: Sequence) -> list[ModelConfig]:
    """Cartesian product of ``axes`` applied on top of ``base``, in row-major order."""
    names = list(axes)
    return [base.with_(**dict(zip(names, combo)))
            for combo in itertools.product(*(axes[n] for n in names))]


@dataclass
class GridResult:
    best: ModelConfig | None
    reports: list[tuple[ModelConfig, MetricReport | None, str | None]] = field(default_factory=list)
    best_model: TrainedModel | None = None


def grid_search(grid: Iterable[ModelConfig], split, objective: str = "ndcg", K: int = 10,
                train_data=None, tail=None, alphas=(1,)) -> GridResult:
    """Train and evaluate every config; keep the best by ``objective``.

    ``train_data`` overrides ``split.train`` (e.g. its percentile
    transform); evaluation always uses ``split.test``. Ties go to the
    earlier config. A config that fails to train is recorded and skipped.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    data = split.train if train_data is None else train_data
    result = GridResult(best=None)
    best_value = -np.inf
    for cfg in grid:
        try:
            model = train(cfg, data)
            recs = recommend(model, K)
        except (TrainingError, np.linalg.LinAlgError) as exc:
            log.warning("config %s failed: %s", cfg.label(), exc)
            result.reports.append((cfg, None, str(exc)))
            continue
        report = evaluate(recs, split.test, tail=tail, alphas=alphas,
                          algorithm=cfg.algorithm, config=cfg.label())
        value = report.get(objective)
        result.reports.append((cfg, report, None))
        if value > best_value:
            best_value = value
            result.best = cfg
            result.best_model = model
    if result.best is None:
        raise TrainingError("every configuration in the grid failed to train")
    return result
