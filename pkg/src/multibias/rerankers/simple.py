"""Random and Reverse baselines, xQuAD and FA*IR: per-user rerankers."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import binom

from .base import RerankConfig, RerankContext, by_score


def rerank_random(items, scores, cfg: RerankConfig, u: int):
    rng = np.random.default_rng((cfg.seed, u))
    k = min(cfg.K, items.size)
    pos = rng.choice(items.size, size=k, replace=False)
    return by_score(items, scores, pos.tolist()), False


def rerank_reverse(items, scores, cfg: RerankConfig, u: int):
    k = min(cfg.K, items.size)
    pos = sorted(range(items.size), key=lambda j: (scores[j], -j))[:k]
    return [(int(items[j]), float(scores[j])) for j in pos], False


def rerank_xquad(items, scores, cfg: RerankConfig, tail_mask: np.ndarray, p_tail: float):
    """Greedy coverage of the head/tail aspects traded off against relevance.

    The marginal value of a candidate is
    ``(1 - lam) * rel + lam * P(c|u) * [aspect c not yet covered]``, where
    ``c`` is the candidate's own aspect and ``rel`` its min-max normalized
    score. Ties go to the earlier list position.
    """
    k = min(cfg.K, items.size)
    lo, hi = float(scores.min()), float(scores.max())
    rel = (scores - lo) / (hi - lo) if hi > lo else np.ones_like(scores)
    is_tail = tail_mask[items]
    weight = {True: p_tail, False: 1.0 - p_tail}
    covered = {True: False, False: False}
    free = list(range(items.size))
    out = []
    for _ in range(k):
        best, best_val = None, -math.inf
        for j in free:
            c = bool(is_tail[j])
            val = (1.0 - cfg.lam) * rel[j] + cfg.lam * (0.0 if covered[c] else weight[c])
            if val > best_val:
                best, best_val = j, val
        free.remove(best)
        covered[bool(is_tail[best])] = True
        out.append((int(items[best]), float(scores[best])))
    return out, False


def fastar_mtable(K: int, p: float, a_sig: float) -> np.ndarray:
    """``m[k]`` for k = 0..K: smallest t with BinomCDF(t; k, p) > a_sig."""
    m = np.zeros(K + 1, dtype=np.int64)
    for k in range(1, K + 1):
        t = 0
        while binom.cdf(t, k, p) <= a_sig:
            t += 1
        m[k] = t
    return m


def rerank_fastar(items, scores, cfg: RerankConfig, tail_mask: np.ndarray, mtable: np.ndarray):
    """Ranked group fairness: every prefix k holds at least ``mtable[k]`` tail items.

    Returns the list and whether the constraint could not be met.
    """
    k = min(cfg.K, items.size)
    order = sorted(range(items.size), key=lambda j: (-scores[j], j))
    prot = [j for j in order if tail_mask[items[j]]]
    other = [j for j in order if not tail_mask[items[j]]]
    out, n_prot, flagged = [], 0, False
    for pos in range(1, k + 1):
        if n_prot < mtable[pos] and prot:
            j = prot.pop(0)
        elif n_prot < mtable[pos]:
            flagged = True
            j = other.pop(0)
        elif prot and (not other or (-scores[prot[0]], prot[0]) < (-scores[other[0]], other[0])):
            j = prot.pop(0)
        else:
            j = other.pop(0)
        n_prot += bool(tail_mask[items[j]])
        out.append((int(items[j]), float(scores[j])))
    return out, flagged


def per_user(method: str, cands, cfg: RerankConfig, ctx: RerankContext):
    """Apply a per-user reranker to every list; returns (lists, flagged users, notes)."""
    notes = {}
    p = cfg.p if cfg.p is not None else ctx.protected_share()
    if method == "FASTAR":
        if not 0.0 < p < 1.0:
            raise ValueError(f"protected share {p} outside (0, 1)")
        mtable = fastar_mtable(cfg.K, p, cfg.a_sig)
        notes.update(p=p, mtable=mtable.tolist())
    if method == "XQUAD":
        affinity = ctx.tail_affinity(len(cands))
    lists, flagged = [], []
    for u, (items, scores) in enumerate(cands):
        if items.size == 0:
            lists.append([])
            continue
        if method == "RANDOM":
            lst, bad = rerank_random(items, scores, cfg, u)
        elif method == "REVERSE":
            lst, bad = rerank_reverse(items, scores, cfg, u)
        elif method == "XQUAD":
            lst, bad = rerank_xquad(items, scores, cfg, ctx.tail, float(affinity[u]))
        else:
            lst, bad = rerank_fastar(items, scores, cfg, ctx.tail, mtable)
        lists.append(lst)
        if bad:
            flagged.append(u)
    return lists, flagged, notes
