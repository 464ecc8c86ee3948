"""User- and item-based neighborhood models with significance shrinkage.

Similarities are multiplied by ``n / (n + shrinkage)`` where ``n`` is the
number of co-rating users/items. Neighborhoods are formed per prediction:
the most similar users who rated the item, or the most similar items the
user rated. Only positive similarities count; a (user, item) pair with no
neighbor support gets the global mean.
"""
from __future__ import annotations

import numpy as np

from .base import SCORERS, ModelConfig, TrainedModel, attach_training_data, training_arrays


def shrink(sim: np.ndarray, overlap: np.ndarray, shrinkage: float) -> np.ndarray:
    return sim * overlap / (overlap + shrinkage) if shrinkage > 0 else sim.copy()


def pearson_corated(R: np.ndarray, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise Pearson correlation over co-rated columns, and co-rating counts.

    ``R`` holds values (0 where missing) and ``M`` the 0/1 observation mask.
    Pairs with fewer than two co-rated columns or zero variance get 0.
    """
    R = R * M
    n = M @ M.T
    sx = R @ M.T              # sx[u, v] = sum of u's values on columns v also rated
    sxx = (R * R) @ M.T
    sxy = R @ R.T
    with np.errstate(invalid="ignore", divide="ignore"):
        safe_n = np.maximum(n, 1)
        cov = sxy - sx * sx.T / safe_n
        var = sxx - sx ** 2 / safe_n
        denom = np.sqrt(np.clip(var, 0, None) * np.clip(var.T, 0, None))
        corr = np.where((n >= 2) & (denom > 1e-12), cov / np.where(denom > 0, denom, 1), 0.0)
    return np.clip(corr, -1.0, 1.0), n


def cosine_columns(R: np.ndarray, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarity between columns of ``R`` and their co-rating counts."""
    norms = np.sqrt((R * R).sum(axis=0))
    dots = R.T @ R
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(np.outer(norms, norms) > 0, dots / np.outer(norms, norms), 0.0)
    return sim, M.T @ M


def top_k_positive(W: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Zero all but the ``k`` largest positive entries along ``axis``.

    Ties at the cut go to the lower index.
    """
    W = np.where(W > 0, W, 0.0)
    if W.shape[axis] > k:
        order = np.argsort(-W, axis=axis, kind="stable")
        drop = order[k:] if axis == 0 else order[:, k:]
        np.put_along_axis(W, drop, 0.0, axis=axis)
    return W


def _dense(users, items, values, n_users, n_items):
    R = np.zeros((n_users, n_items))
    R[users, items] = values
    M = np.zeros((n_users, n_items))
    M[users, items] = 1.0
    return R, M


def train_userknn(config: ModelConfig, train) -> TrainedModel:
    users, items, values, n_users, n_items, kind = training_arrays(train)
    R, M = _dense(users, items, values, n_users, n_items)
    corr, overlap = pearson_corated(R, M)
    sim = shrink(corr, overlap, config.shrinkage)
    np.fill_diagonal(sim, 0.0)
    counts = M.sum(axis=1)
    means = np.where(counts > 0, R.sum(axis=1) / np.maximum(counts, 1), values.mean())
    params = dict(similarity=sim, user_means=means, fallback=np.float64(values.mean()))
    return TrainedModel("UserKNN", config, attach_training_data(params, users, items, values),
                        n_users, n_items, kind)


def _score_userknn(model: TrainedModel, users: np.ndarray) -> np.ndarray:
    """Mean-centred average over the ``neighbors`` most similar users who rated the item."""
    p = model.params
    R, M = _dense(p["train_users"], p["train_items"], p["train_values"], model.n_users, model.n_items)
    means = p["user_means"]
    centred = (R - means[:, None]) * M
    out = np.empty((users.size, model.n_items))
    for row, u in enumerate(users.tolist()):
        W = top_k_positive(p["similarity"][u][:, None] * M, model.config.neighbors, axis=0)
        num = (W * centred).sum(axis=0)
        den = W.sum(axis=0)
        out[row] = np.where(den > 0, means[u] + num / np.where(den > 0, den, 1.0), p["fallback"])
    return out


def train_itemknn(config: ModelConfig, train) -> TrainedModel:
    users, items, values, n_users, n_items, kind = training_arrays(train)
    R, M = _dense(users, items, values, n_users, n_items)
    cos, overlap = cosine_columns(R, M)
    sim = shrink(cos, overlap, config.shrinkage)
    np.fill_diagonal(sim, 0.0)
    params = dict(similarity=sim, fallback=np.float64(values.mean()))
    return TrainedModel("ItemKNN", config, attach_training_data(params, users, items, values),
                        n_users, n_items, kind)


def _score_itemknn(model: TrainedModel, users: np.ndarray) -> np.ndarray:
    """Similarity-weighted average of the user's values on the ``neighbors`` most similar rated items."""
    p = model.params
    tu, ti, tv = p["train_users"], p["train_items"], p["train_values"]
    bounds = np.searchsorted(tu, np.arange(model.n_users + 1))
    out = np.full((users.size, model.n_items), float(p["fallback"]))
    for row, u in enumerate(users.tolist()):
        lo, hi = bounds[u], bounds[u + 1]
        if lo == hi:
            continue
        W = top_k_positive(p["similarity"][:, ti[lo:hi]], model.config.neighbors, axis=1)
        den = W.sum(axis=1)
        ok = den > 0
        out[row, ok] = (W[ok] @ tv[lo:hi]) / den[ok]
    return out


SCORERS["UserKNN"] = _score_userknn
SCORERS["ItemKNN"] = _score_itemknn
