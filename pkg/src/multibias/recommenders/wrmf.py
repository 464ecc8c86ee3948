"""Weighted regularized matrix factorization (alternating least squares).

Every cell of the user-item matrix takes part: observed cells have
preference 1 and confidence ``1 + alpha * v / max(v)``, unobserved cells
preference 0 and confidence 1. Values are normalised by their maximum so
that rescaling the input leaves the fit unchanged.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .base import SCORERS, ModelConfig, TrainedModel, attach_training_data, check_loss, cold_fallback, training_arrays
from .mf import init_factors


def confidence_matrix(users, items, values, n_users, n_items, alpha) -> sp.csr_matrix:
    scale = float(np.max(np.abs(values))) or 1.0
    conf = 1.0 + alpha * values / scale
    return sp.csr_matrix((conf, (users, items)), shape=(n_users, n_items))


def wrmf_objective(X, Y, C: sp.csr_matrix, reg: float) -> float:
    """sum_ui c_ui (p_ui - x_u.y_i)^2 + reg (|X|^2 + |Y|^2) without densifying."""
    total_sq = float(np.sum((X.T @ X) * (Y.T @ Y)))
    coo = C.tocoo()
    s = np.einsum("ij,ij->i", X[coo.row], Y[coo.col])
    observed = float(np.sum(coo.data * (1.0 - s) ** 2 - s ** 2))
    return total_sq + observed + reg * (float(np.sum(X ** 2)) + float(np.sum(Y ** 2)))


def als_half_step(C: sp.csr_matrix, fixed: np.ndarray, reg: float) -> np.ndarray:
    """Exact minimiser of the objective over the rows of the free side."""
    k = fixed.shape[1]
    gram = fixed.T @ fixed
    out = np.zeros((C.shape[0], k))
    eye = reg * np.eye(k)
    for r in range(C.shape[0]):
        lo, hi = C.indptr[r], C.indptr[r + 1]
        cols = C.indices[lo:hi]
        conf = C.data[lo:hi]
        Yr = fixed[cols]
        A = gram + (Yr.T * (conf - 1.0)) @ Yr + eye
        b = Yr.T @ conf
        out[r] = np.linalg.solve(A, b) if hi > lo else 0.0
    return out


def train_wrmf(config: ModelConfig, train) -> TrainedModel:
    users, items, values, n_users, n_items, kind = training_arrays(train)
    C = confidence_matrix(users, items, values, n_users, n_items, config.confidence_alpha)
    Ct = C.T.tocsr()
    rng = np.random.default_rng(config.seed)
    X = init_factors(rng, n_users, config.factors)
    Y = init_factors(rng, n_items, config.factors)
    reg = config.regularization
    trace = []
    for it in range(config.iterations):
        X = als_half_step(C, Y, reg)
        trace.append(wrmf_objective(X, Y, C, reg))
        Y = als_half_step(Ct, X, reg)
        trace.append(wrmf_objective(X, Y, C, reg))
        check_loss(trace[-1], it, "WRMF")
    params = dict(X=X, Y=Y, fallback=np.float64(X.mean(0) @ Y.mean(0)))
    return TrainedModel("WRMF", config, attach_training_data(params, users, items, values),
                        n_users, n_items, kind, trace)


def _score_wrmf(model: TrainedModel, users: np.ndarray) -> np.ndarray:
    p = model.params
    return cold_fallback(model, users, p["X"][users] @ p["Y"].T)


SCORERS["WRMF"] = _score_wrmf
