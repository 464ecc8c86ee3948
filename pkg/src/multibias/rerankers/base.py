"""Shared configuration and plumbing for post-processing rerankers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..bias import ItemSegmentation
from ..recset import RecommendationSet

METHODS = ("DM", "FASTAR", "XQUAD", "FAIRMATCH", "RANDOM", "REVERSE")
EXPOSURE_POLICIES = ("uniform",)

# simplifications relative to the published algorithms, copied into every output's notes
DEVIATIONS = {
    "DM": "rank-based edge costs; uniform target degree with high-cost overflow arcs",
    "FASTAR": "no multiple-testing correction of a_sig",
    "XQUAD": "binary head/tail aspects; scores min-max normalized per list",
    "FAIRMATCH": "degree-based item capacities; min-cost maximum flow per iteration",
    "RANDOM": "",
    "REVERSE": "",
}


class RerankError(ValueError):
    """Invalid reranker configuration or input."""


@dataclass(frozen=True)
class RerankConfig:
    method: str
    K: int = 10
    lam: float = 0.5
    p: float | None = None          # None: tail share of the catalog
    a_sig: float = 0.1
    iterations: int = 5
    target_exposure: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise RerankError(f"unknown reranker {self.method!r}; expected one of {METHODS}")
        if self.K < 1:
            raise RerankError("K must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise RerankError("lam must lie in [0, 1]")
        if self.p is not None and not 0.0 < self.p < 1.0:
            raise RerankError("p must lie in (0, 1)")
        if not 0.0 < self.a_sig < 1.0:
            raise RerankError("a_sig must lie in (0, 1)")
        if self.iterations < 1:
            raise RerankError("iterations must be >= 1")
        if self.target_exposure not in EXPOSURE_POLICIES:
            raise RerankError(f"unknown target_exposure {self.target_exposure!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RerankConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise RerankError(f"unknown reranker config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> RerankConfig:
        return replace(self, **kw)


@dataclass(frozen=True)
class RerankContext:
    """Read-only inputs shared by all users: item groups and training data."""

    segmentation: ItemSegmentation
    train: object = None
    tail: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "tail", self.segmentation.tail_mask())

    def protected_share(self) -> float:
        return float(self.tail.mean())

    def tail_affinity(self, n_users: int) -> np.ndarray:
        """Fraction of each user's training profile that is tail items (0.5 if unknown)."""
        out = np.full(n_users, 0.5)
        if self.train is None:
            return out
        users = np.asarray(self.train.users)
        items = np.asarray(self.train.items)
        counts = np.bincount(users, minlength=n_users)[:n_users]
        tails = np.bincount(users, weights=self.tail[items].astype(float), minlength=n_users)[:n_users]
        seen = counts > 0
        out[seen] = tails[seen] / counts[seen]
        return out


def candidate_lists(initial: RecommendationSet) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per user (items, scores) of the initial list, in list order."""
    out = []
    for u in range(initial.n_users):
        keep = initial.items[u] >= 0
        items = initial.items[u][keep]
        scores = initial.scores[u][keep]
        if np.isnan(scores).any():
            raise RerankError(f"initial list of user {u} lacks scores")
        out.append((items, scores))
    return out


def by_score(items: np.ndarray, scores: np.ndarray, chosen_pos) -> list[tuple[int, float]]:
    """Chosen list positions re-ordered by score (list order breaks ties)."""
    pos = sorted(chosen_pos, key=lambda j: (-scores[j], j))
    return [(int(items[j]), float(scores[j])) for j in pos]


def assemble(lists, initial: RecommendationSet, K: int, notes: dict) -> RecommendationSet:
    short = tuple(u for u, lst in enumerate(lists) if len(lst) < K)
    return RecommendationSet.from_lists(lists, initial.n_items, K, short, notes)
