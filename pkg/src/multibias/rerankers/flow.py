"""Global rerankers solved as integral minimum-cost flows.

Both are bipartite b-matching problems (users x candidate items). Their
constraint matrices are totally unimodular, so a simplex vertex of the LP
relaxation is integral; HiGHS dual simplex returns one.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .base import RerankConfig, by_score


class FlowError(RuntimeError):
    """The flow LP could not be solved."""


def _edges(cands, allowed=None):
    """Flatten candidate lists into edge arrays (user, list position, item, rank)."""
    us, pos, its = [], [], []
    for u, (items, _) in enumerate(cands):
        for j, i in enumerate(items.tolist()):
            if allowed is None or allowed(u, j, i):
                us.append(u)
                pos.append(j)
                its.append(i)
    return np.array(us, dtype=np.int64), np.array(pos, dtype=np.int64), np.array(its, dtype=np.int64)


def _solve(c, A_ub, b_ub, A_eq, b_eq, upper):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=np.column_stack([np.zeros(c.size), upper]), method="highs-ds")
    if res.status != 0:
        raise FlowError(f"flow solver failed: {res.message}")
    x = np.round(res.x)
    if np.abs(res.x - x).max() > 1e-6:
        raise FlowError("flow solution is not integral")
    return x


def dm_assign(cands, K: int):
    """Assign each user ``min(K, |list|)`` of its candidates at minimum total rank.

    Every candidate item can absorb ``ceil(|U| K / #candidates)`` users at
    no penalty; each unit beyond that crosses an overflow arc costing more
    than any total rank, so overflow is only used when unavoidable.
    Returns (per-user chosen positions, overflow units, total rank cost, capacity).
    """
    n_users = len(cands)
    uu, pos, ii = _edges(cands)
    cand_items, item_idx = np.unique(ii, return_inverse=True)
    demand = np.array([min(K, items.size) for items, _ in cands], dtype=float)
    n_cand = cand_items.size
    chosen = [[] for _ in range(n_users)]
    if n_cand == 0:
        return chosen, 0, 0, 0
    cap = math.ceil(n_users * K / n_cand)
    N = max(items.size for items, _ in cands)
    big = n_users * K * N + 1
    n_e = uu.size
    # variables: one per (user, candidate) edge, then one overflow per item
    c = np.concatenate([pos.astype(float), np.full(n_cand, float(big))])
    A_eq = sp.csr_matrix((np.ones(n_e), (uu, np.arange(n_e))), shape=(n_users, n_e + n_cand))
    A_ub = sp.csr_matrix(
        (np.concatenate([np.ones(n_e), -np.ones(n_cand)]),
         (np.concatenate([item_idx, np.arange(n_cand)]), np.concatenate([np.arange(n_e), n_e + np.arange(n_cand)]))),
        shape=(n_cand, n_e + n_cand))
    upper = np.concatenate([np.ones(n_e), np.full(n_cand, demand.sum())])
    x = _solve(c, A_ub, np.full(n_cand, float(cap)), A_eq, demand, upper)
    for e in np.flatnonzero(x[:n_e] > 0.5):
        chosen[uu[e]].append(int(pos[e]))
    overflow = int(x[n_e:].sum())
    return chosen, overflow, int(pos[x[:n_e] > 0.5].sum()), cap


def rerank_dm(cands, cfg: RerankConfig):
    chosen, overflow, cost, cap = dm_assign(cands, cfg.K)
    lists = [by_score(items, scores, chosen[u]) for u, (items, scores) in enumerate(cands)]
    notes = dict(total_cost=cost, overflow_units=overflow, item_capacity=cap)
    if overflow:
        notes["overflow_used"] = True
    return lists, [], notes


def max_flow_min_cost(uu, cost, item_idx, user_cap, item_cap):
    """Maximum-cardinality b-matching of minimum total cost.

    Each matched edge earns a bonus larger than the cost change along any
    augmenting path, so the cost-minimal solution is also flow-maximal.
    """
    n_e = uu.size
    if n_e == 0:
        return np.zeros(0, dtype=bool)
    n_u, n_i = user_cap.size, item_cap.size
    bonus = (float(cost.max()) + 1.0) * (min(n_u, n_i) + 1) + 1.0
    rows = np.concatenate([uu, n_u + item_idx])
    cols = np.concatenate([np.arange(n_e), np.arange(n_e)])
    A = sp.csr_matrix((np.ones(2 * n_e), (rows, cols)), shape=(n_u + n_i, n_e))
    b = np.concatenate([user_cap, item_cap]).astype(float)
    x = _solve(cost.astype(float) - bonus, A, b, None, None, np.ones(n_e))
    return x > 0.5


def rerank_fairmatch(cands, cfg: RerankConfig):
    """Iterative flow matching that steers slots toward rarely shown items.

    Item capacity is the uniform target degree minus the item's visibility in
    the plain top-K (at least 1). Each round matches at most
    ``ceil(K / iterations)`` new items per user; every item matched in a
    round leaves the graph. Lists are the matched items by score, then the
    best remaining candidates.
    """
    n_users = len(cands)
    K = cfg.K
    uu_all, _, ii_all = _edges(cands)
    cand_items = np.unique(ii_all)
    if cand_items.size == 0:
        return [[] for _ in range(n_users)], [], dict(matched=0)
    target = math.ceil(n_users * K / cand_items.size)
    visibility = {}
    for items, _ in cands:
        for i in items[:K].tolist():
            visibility[i] = visibility.get(i, 0) + 1
    removed: set[int] = set()
    matched = [set() for _ in range(n_users)]
    per_round = math.ceil(K / cfg.iterations)
    for _ in range(cfg.iterations):
        uu, pos, ii = _edges(cands, lambda u, j, i: i not in removed and j not in matched[u])
        if uu.size == 0:
            break
        items_now, item_idx = np.unique(ii, return_inverse=True)
        item_cap = np.array([max(1, target - visibility.get(i, 0)) for i in items_now.tolist()])
        user_cap = np.array([max(0, min(per_round, K - len(m))) for m in matched])
        take = max_flow_min_cost(uu, pos, item_idx, user_cap, item_cap)
        if not take.any():
            break
        for e in np.flatnonzero(take):
            matched[uu[e]].add(int(pos[e]))
        removed.update(items_now[np.unique(item_idx[take])].tolist())
    lists = []
    for u, (items, scores) in enumerate(cands):
        first = by_score(items, scores, matched[u])
        rest = by_score(items, scores, [j for j in range(items.size) if j not in matched[u]])
        lists.append((first + rest)[: min(K, items.size)])
    return lists, [], dict(matched=int(sum(len(m) for m in matched)), item_target=target)
