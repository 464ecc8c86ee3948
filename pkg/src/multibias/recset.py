"""Per-user ranked recommendation lists."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["RecommendationSet", "top_k_from_scores"]


@dataclass(frozen=True)
class RecommendationSet:
    """Ranked lists stored as ``(n_users, K)`` arrays.

    Rows shorter than ``K`` (infeasible users) are padded with item ``-1``
    and score ``nan``; their indices are listed in ``short_users``.
    """

    items: np.ndarray
    scores: np.ndarray
    n_items: int
    short_users: tuple[int, ...] = field(default=())
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if items.ndim != 2 or items.shape != scores.shape:
            raise ValueError("items and scores must be equal-shape 2-D arrays")
        items.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "scores", scores)

    @property
    def n_users(self) -> int:
        return self.items.shape[0]

    @property
    def K(self) -> int:
        return self.items.shape[1]

    def lengths(self) -> np.ndarray:
        return (self.items >= 0).sum(axis=1)

    def list_for(self, u: int) -> list[int]:
        row = self.items[u]
        return row[row >= 0].tolist()

    def scored_list(self, u: int) -> list[tuple[int, float]]:
        keep = self.items[u] >= 0
        return list(zip(self.items[u][keep].tolist(), self.scores[u][keep].tolist()))

    def appearances(self) -> np.ndarray:
        """Number of lists each catalog item appears in."""
        flat = self.items[self.items >= 0]
        return np.bincount(flat, minlength=self.n_items)

    def check(self, train_mask: np.ndarray | None = None, score_order: bool = True):
        """Assert the structural invariants; raises ``AssertionError``.

        ``score_order=False`` skips the non-increasing score check, for
        rerankers whose output order is not the score order.
        """
        for u in range(self.n_users):
            row = self.list_for(u)
            assert len(set(row)) == len(row), f"duplicate item in list of user {u}"
            sc = self.scores[u][: len(row)]
            assert not score_order or np.all(np.diff(sc) <= 1e-12), f"scores increase in list of user {u}"
            if train_mask is not None:
                assert not train_mask[u, row].any(), f"training item recommended to user {u}"

    @classmethod
    def from_lists(cls, lists, n_items: int, K: int | None = None, short_users=(),
                   notes: dict | None = None) -> RecommendationSet:
        """Build from a sequence of ``[(item, score), ...]`` lists."""
        K = K if K is not None else max((len(x) for x in lists), default=0)
        items = np.full((len(lists), K), -1, dtype=np.int64)
        scores = np.full((len(lists), K), np.nan)
        for u, lst in enumerate(lists):
            for r, (i, s) in enumerate(lst[:K]):
                items[u, r] = i
                scores[u, r] = s
        return cls(items, scores, n_items, tuple(short_users), dict(notes or {}))

    def write(self, path: str | Path, matrix=None, delimiter: str = "\t"):
        """``<user> <item> <rank> <score>`` lines, ranks starting at 1."""
        ext_u = matrix.external_user if matrix is not None else str
        ext_i = matrix.external_item if matrix is not None else str
        with Path(path).open("w", encoding="utf-8") as fh:
            for u in range(self.n_users):
                for rank, (i, s) in enumerate(self.scored_list(u), start=1):
                    fh.write(f"{ext_u(u)}{delimiter}{ext_i(i)}{delimiter}{rank}{delimiter}{s!r}\n")

    @classmethod
    def read(cls, path: str | Path, n_users: int, n_items: int, matrix=None,
             delimiter: str = "\t") -> RecommendationSet:
        """Inverse of :meth:`write`; ``matrix`` maps external ids back."""
        uid = {matrix.external_user(u): u for u in range(n_users)} if matrix is not None else None
        iid = {matrix.external_item(i): i for i in range(n_items)} if matrix is not None else None
        lists: list[list[tuple[int, int, float]]] = [[] for _ in range(n_users)]
        with Path(path).open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split(delimiter)
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected user, item, rank, score")
                u = uid[parts[0]] if uid else int(parts[0])
                i = iid[parts[1]] if iid else int(parts[1])
                lists[u].append((int(parts[2]), i, float(parts[3])))
        ordered = [[(i, s) for _, i, s in sorted(lst)] for lst in lists]
        K = max((len(x) for x in ordered), default=0)
        short = tuple(u for u, x in enumerate(ordered) if len(x) < K)
        return cls.from_lists(ordered, n_items, K, short)


def top_k_from_scores(scores: np.ndarray, k: int, exclude: np.ndarray | None = None) -> RecommendationSet:
    """Top-``k`` items per row of a dense score matrix.

    Ties are broken by ascending item id. Items flagged in ``exclude`` are
    never returned; rows with fewer than ``k`` eligible items are shortened
    and flagged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_users, n_items = scores.shape
    masked = scores.copy()
    if exclude is not None:
        masked[exclude] = -np.inf
    items = np.full((n_users, k), -1, dtype=np.int64)
    out = np.full((n_users, k), np.nan)
    ids = np.arange(n_items)
    short = []
    for u in range(n_users):
        row = masked[u]
        eligible = np.isfinite(row) if exclude is None else ~exclude[u]
        n_ok = int(eligible.sum())
        take = min(k, n_ok)
        if take < k:
            short.append(u)
        if take == 0:
            continue
        if take < n_items:
            # candidates: everything at least as good as the take-th best score
            kth = np.partition(-row, take - 1)[take - 1]
            cand = np.flatnonzero((-row <= kth) & eligible)
        else:
            cand = np.flatnonzero(eligible)
        order = np.lexsort((ids[cand], -row[cand]))[:take]
        chosen = cand[order]
        items[u, :take] = chosen
        out[u, :take] = scores[u, chosen]
    return RecommendationSet(items, out, n_items, tuple(short))
