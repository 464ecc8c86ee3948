"""List-wise matrix factorization with a top-one probability loss.

For every user the softmax of the observed values over the user's training
items is the target distribution; the model distribution is the softmax of
``sigmoid(U_u . V_i)`` over the same items. The loss is the summed
cross-entropy plus an L2 penalty, minimised by full-batch gradient descent.
"""
from __future__ import annotations

import numpy as np

from .base import SCORERS, ModelConfig, TrainedModel, attach_training_data, check_loss, cold_fallback, training_arrays
from .mf import init_factors


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def segment_softmax(x: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Softmax of ``x`` within each group id."""
    peak = np.full(n_groups, -np.inf)
    np.maximum.at(peak, groups, x)
    e = np.exp(x - peak[groups])
    return e / np.bincount(groups, weights=e, minlength=n_groups)[groups]


def listrank_loss(U, V, users, items, targets, reg):
    n_users = U.shape[0]
    g = _sigmoid(np.einsum("ij,ij->i", U[users], V[items]))
    p_model = segment_softmax(g, users, n_users)
    p_true = segment_softmax(targets, users, n_users)
    ce = -float(np.sum(p_true * np.log(p_model)))
    return ce + 0.5 * reg * (float(np.sum(U ** 2)) + float(np.sum(V ** 2)))


def listrank_gradients(U, V, users, items, targets, reg):
    """Gradients of :func:`listrank_loss` w.r.t. (U, V)."""
    n_users = U.shape[0]
    g = _sigmoid(np.einsum("ij,ij->i", U[users], V[items]))
    p_model = segment_softmax(g, users, n_users)
    p_true = segment_softmax(targets, users, n_users)
    # d CE / d g = p_model - p_true within a list (the true weights sum to 1)
    d = (p_model - p_true) * g * (1.0 - g)
    gU = reg * U
    gV = reg * V
    np.add.at(gU, users, d[:, None] * V[items])
    np.add.at(gV, items, d[:, None] * U[users])
    return gU, gV


def train_listrank(config: ModelConfig, train) -> TrainedModel:
    users, items, values, n_users, n_items, kind = training_arrays(train)
    scale = float(np.max(np.abs(values))) or 1.0
    targets = values / scale
    rng = np.random.default_rng(config.seed)
    U = init_factors(rng, n_users, config.factors)
    V = init_factors(rng, n_items, config.factors)
    lr, reg = config.learning_rate, config.regularization
    trace = []
    for it in range(config.iterations):
        gU, gV = listrank_gradients(U, V, users, items, targets, reg)
        U -= lr * gU
        V -= lr * gV
        loss = listrank_loss(U, V, users, items, targets, reg)
        check_loss(loss, it, "ListRankMF")
        trace.append(loss)
    fallback = float(np.mean(_sigmoid(U @ V.T))) * scale
    params = dict(U=U, V=V, value_scale=np.float64(scale), fallback=np.float64(fallback))
    return TrainedModel("ListRankMF", config, attach_training_data(params, users, items, values),
                        n_users, n_items, kind, trace)


def _score_listrank(model: TrainedModel, users: np.ndarray) -> np.ndarray:
    p = model.params
    s = _sigmoid(p["U"][users] @ p["V"].T) * p["value_scale"]
    return cold_fallback(model, users, s)


SCORERS["ListRankMF"] = _score_listrank
