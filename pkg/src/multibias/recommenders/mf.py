"""Biased matrix factorization and SVD++ trained by stochastic gradient descent.

Values are divided by the largest training value before fitting so that
rating (1-5) and percentile (0-100) inputs share learning-rate and
regularization grids; predictions are mapped back to input units.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .base import (
    SCORERS,
    ModelConfig,
    TrainedModel,
    attach_training_data,
    check_loss,
    cold_fallback,
    training_arrays,
)


def init_factors(rng: np.random.Generator, rows: int, factors: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(factors)
    return rng.uniform(-bound, bound, size=(rows, factors))


# BiasedMF: s(u, i) = mu + b_u + b_i + p_u . q_i
#
# Per-entry objective (summed over training entries):
#   1/2 (v - s)^2 + reg/2 (b_u^2 + b_i^2 + |p_u|^2 + |q_i|^2)

def biasedmf_loss(mu, bu, bi, P, Q, users, items, values, reg):
    pred = mu + bu[users] + bi[items] + np.einsum("ij,ij->i", P[users], Q[items])
    err = values - pred
    penalty = bu[users] ** 2 + bi[items] ** 2 + (P[users] ** 2).sum(1) + (Q[items] ** 2).sum(1)
    return 0.5 * float(np.sum(err ** 2)) + 0.5 * reg * float(np.sum(penalty))


def biasedmf_gradients(mu, bu, bi, P, Q, users, items, values, reg):
    """Full-batch gradients of :func:`biasedmf_loss` w.r.t. (bu, bi, P, Q)."""
    pred = mu + bu[users] + bi[items] + np.einsum("ij,ij->i", P[users], Q[items])
    err = values - pred
    g_bu = np.zeros_like(bu)
    g_bi = np.zeros_like(bi)
    g_P = np.zeros_like(P)
    g_Q = np.zeros_like(Q)
    np.add.at(g_bu, users, -err + reg * bu[users])
    np.add.at(g_bi, items, -err + reg * bi[items])
    np.add.at(g_P, users, -err[:, None] * Q[items] + reg * P[users])
    np.add.at(g_Q, items, -err[:, None] * P[users] + reg * Q[items])
    return g_bu, g_bi, g_P, g_Q


@njit(cache=True, nogil=True)
def _biasedmf_epoch(users, items, values, order, mu, bu, bi, P, Q, lr, reg):
    k = P.shape[1]
    for idx in order:
        u = users[idx]
        i = items[idx]
        pred = mu + bu[u] + bi[i]
        for f in range(k):
            pred += P[u, f] * Q[i, f]
        e = values[idx] - pred
        bu[u] += lr * (e - reg * bu[u])
        bi[i] += lr * (e - reg * bi[i])
        for f in range(k):
            pf = P[u, f]
            qf = Q[i, f]
            P[u, f] += lr * (e * qf - reg * pf)
            Q[i, f] += lr * (e * pf - reg * qf)


def train_biasedmf(config: ModelConfig, train) -> TrainedModel:
    users, items, values, n_users, n_items, kind = training_arrays(train)
    scale = float(np.max(np.abs(values))) or 1.0
    v = values / scale
    rng = np.random.default_rng(config.seed)
    mu = float(v.mean())
    bu = np.zeros(n_users)
    bi = np.zeros(n_items)
    P = init_factors(rng, n_users, config.factors)
    Q = init_factors(rng, n_items, config.factors)
    trace = []
    for epoch in range(config.iterations):
        order = rng.permutation(v.size)
        _biasedmf_epoch(users, items, v, order, mu, bu, bi, P, Q,
                        config.learning_rate, config.regularization)
        loss = biasedmf_loss(mu, bu, bi, P, Q, users, items, v, config.regularization)
        check_loss(loss, epoch, "BiasedMF")
        trace.append(loss)
    params = dict(mu=np.float64(mu), bu=bu, bi=bi, P=P, Q=Q, value_scale=np.float64(scale),
                  fallback=np.float64(values.mean()))
    return TrainedModel("BiasedMF", config, attach_training_data(params, users, items, values),
                        n_users, n_items, kind, trace)


def _score_biasedmf(model: TrainedModel, users: np.ndarray) -> np.ndarray:
    p = model.params
    s = p["mu"] + p["bu"][users, None] + p["bi"][None, :] + p["P"][users] @ p["Q"].T
    return cold_fallback(model, users, s * p["value_scale"])


# SVD++: s(u, i) = mu + b_u + b_i + q_i . (p_u + |N(u)|^-1/2 sum_{j in N(u)} y_j)
# Users are visited in random order; the implicit-factor gradient of a user's
# ratings is accumulated and applied to its y_j once per visit.

@njit(cache=True, nogil=True)
def _svdpp_epoch(indptr, items, values, user_order, entry_perm, mu, bu, bi, P, Q, Y, lr, reg):
    k = P.shape[1]
    z = np.zeros(k)
    acc = np.zeros(k)
    for u in user_order:
        lo = indptr[u]
        hi = indptr[u + 1]
        n = hi - lo
        if n == 0:
            continue
        norm = 1.0 / np.sqrt(n)
        for f in range(k):
            z[f] = 0.0
            acc[f] = 0.0
        for t in range(lo, hi):
            j = items[t]
            for f in range(k):
                z[f] += Y[j, f]
        for f in range(k):
            z[f] *= norm
        for t in range(lo, hi):
            idx = lo + entry_perm[t]
            i = items[idx]
            pred = mu + bu[u] + bi[i]
            for f in range(k):
                pred += Q[i, f] * (P[u, f] + z[f])
            e = values[idx] - pred
            bu[u] += lr * (e - reg * bu[u])
            bi[i] += lr * (e - reg * bi[i])
            for f in range(k):
                pf = P[u, f]
                qf = Q[i, f]
                P[u, f] += lr * (e * qf - reg * pf)
                Q[i, f] += lr * (e * (pf + z[f]) - reg * qf)
                acc[f] += e * qf
        for t in range(lo, hi):
            j = items[t]
            for f in range(k):
                Y[j, f] += lr * (norm * acc[f] - reg * Y[j, f])


def _implicit_sums(indptr, items, Y):
    n_users = len(indptr) - 1
    counts = np.diff(indptr)
    user_of = np.repeat(np.arange(n_users), counts)
    Z = np.zeros((n_users, Y.shape[1]))
    np.add.at(Z, user_of, Y[items])
    norm = np.where(counts > 0, 1.0 / np.sqrt(np.maximum(counts, 1)), 0.0)
    return Z * norm[:, None]


def svdpp_loss(mu, bu, bi, P, Q, Y, indptr, users, items, values, reg):
    Z = _implicit_sums(indptr, items, Y)
    pred = mu + bu[users] + bi[items] + np.einsum("ij,ij->i", P[users] + Z[users], Q[items])
    err = values - pred
    penalty = (bu[users] ** 2 + bi[items] ** 2 + (P[users] ** 2).sum(1) + (Q[items] ** 2).sum(1))
    return 0.5 * float(np.sum(err ** 2)) + 0.5 * reg * (float(np.sum(penalty)) + float(np.sum(Y ** 2)))


def train_svdpp(config: ModelConfig, train) -> TrainedModel:
    users, items, values, n_users, n_items, kind = training_arrays(train)
    scale = float(np.max(np.abs(values))) or 1.0
    v = values / scale
    indptr = np.searchsorted(users, np.arange(n_users + 1)).astype(np.int64)
    rng = np.random.default_rng(config.seed)
    mu = float(v.mean())
    bu = np.zeros(n_users)
    bi = np.zeros(n_items)
    P = init_factors(rng, n_users, config.factors)
    Q = init_factors(rng, n_items, config.factors)
    Y = init_factors(rng, n_items, config.factors)
    counts = np.diff(indptr)
    trace = []
    for epoch in range(config.iterations):
        user_order = rng.permutation(n_users)
        # within-user shuffle expressed as offsets relative to each user's block
        keys = rng.random(v.size)
        local = np.lexsort((keys, users))
        entry_perm = local - np.repeat(indptr[:-1], counts)
        _svdpp_epoch(indptr, items, v, user_order, entry_perm, mu, bu, bi, P, Q, Y,
                     config.learning_rate, config.regularization)
        loss = svdpp_loss(mu, bu, bi, P, Q, Y, indptr, users, items, v, config.regularization)
        check_loss(loss, epoch, "SVDpp")
        trace.append(loss)
    Z = _implicit_sums(indptr, items, Y)
    params = dict(mu=np.float64(mu), bu=bu, bi=bi, P=P, Q=Q, Y=Y, Z=Z,
                  value_scale=np.float64(scale), fallback=np.float64(values.mean()))
    return TrainedModel("SVDpp", config, attach_training_data(params, users, items, values),
                        n_users, n_items, kind, trace)


def _score_svdpp(model: TrainedModel, users: np.ndarray) -> np.ndarray:
    p = model.params
    s = p["mu"] + p["bu"][users, None] + p["bi"][None, :] + (p["P"][users] + p["Z"][users]) @ p["Q"].T
    return cold_fallback(model, users, s * p["value_scale"])


SCORERS["BiasedMF"] = _score_biasedmf
SCORERS["SVDpp"] = _score_svdpp
