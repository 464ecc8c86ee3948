from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..recset import RecommendationSet, top_k_from_scores

log = logging.getLogger(__name__)

ALGORITHMS = ("BiasedMF", "SVDpp", "WRMF", "ListRankMF", "UserKNN", "ItemKNN")
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss) or the input cannot be used."""


@dataclass(frozen=True)
class ModelConfig:
    algorithm: str = "BiasedMF"
    factors: int = 30
    iterations: int = 30
    learning_rate: float = 0.01
    regularization: float = 0.01
    neighbors: int = 50
    shrinkage: float = 100.0
    confidence_alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        for name in ("factors", "iterations", "neighbors"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("learning_rate", "regularization", "shrinkage", "confidence_alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> ModelConfig:
        return replace(self, **kw)

    def label(self) -> str:
        if self.algorithm in ("UserKNN", "ItemKNN"):
            return f"{self.algorithm}(k={self.neighbors},shrink={self.shrinkage:g})"
        return (f"{self.algorithm}(f={self.factors},it={self.iterations},"
                f"lr={self.learning_rate:g},reg={self.regularization:g})")


def training_arrays(train):
    """(users, items, values, n_users, n_items, input kind) of a rating or percentile matrix."""
    kind = "percentile" if hasattr(train, "source_scale") else "rating"
    if train.nnz == 0:
        raise TrainingError("empty training data")
    return (np.asarray(train.users, dtype=np.int64), np.asarray(train.items, dtype=np.int64),
            np.asarray(train.values, dtype=np.float64), train.n_users, train.n_items, kind)


@dataclass
class TrainedModel:
    """Learned parameters plus enough bookkeeping to score any (user, item).

    ``params`` holds named arrays; the scoring rule is looked up from the
    algorithm tag, so a model round-trips through :func:`save_model`.
    """

    algorithm: str
    config: ModelConfig
    params: dict[str, np.ndarray]
    n_users: int
    n_items: int
    input_kind: str = "rating"
    loss_trace: list[float] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def train_csr(self) -> sp.csr_matrix:
        p = self.params
        return sp.csr_matrix((p["train_values"], (p["train_users"], p["train_items"])),
                             shape=(self.n_users, self.n_items))

    def train_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_users, self.n_items), dtype=bool)
        mask[self.params["train_users"], self.params["train_items"]] = True
        return mask

    def score(self, users: np.ndarray | None = None) -> np.ndarray:
        """Dense ``(len(users), n_items)`` score block."""
        if users is None:
            users = np.arange(self.n_users)
        users = np.asarray(users, dtype=np.int64)
        out = SCORERS[self.algorithm](self, users)
        if not np.all(np.isfinite(out)):
            raise TrainingError(f"{self.algorithm} produced non-finite scores")
        return out


SCORERS: dict[str, Callable[[TrainedModel, np.ndarray], np.ndarray]] = {}


def attach_training_data(params: dict, users, items, values):
    params["train_users"] = users
    params["train_items"] = items
    params["train_values"] = values
    return params


def cold_fallback(model: TrainedModel, users: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Replace scores of users/items without training data by the model's fallback.

    The fallback is the global mean on the model's own score scale (mean
    training value for rating predictors, mean predicted score otherwise).
    """
    mu = float(model.params["fallback"])
    ucount = np.bincount(model.params["train_users"], minlength=model.n_users)
    icount = np.bincount(model.params["train_items"], minlength=model.n_items)
    scores[:, icount == 0] = mu
    scores[ucount[users] == 0, :] = mu
    return scores


def check_loss(loss: float, epoch: int, algorithm: str):
    if not np.isfinite(loss):
        raise TrainingError(
            f"{algorithm}: loss became {loss} at iteration {epoch}; "
            "lower the learning rate or raise regularization"
        )


def recommend(model: TrainedModel, K: int, exclude_train: bool = True,
              batch_size: int = 2048) -> RecommendationSet:
    """Top-``K`` items per user; ties broken by ascending item id.

    With ``exclude_train`` the user's training items are never returned;
    users with fewer than ``K`` eligible items get a shorter, flagged list.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    mask = model.train_mask() if exclude_train else None
    parts = []
    for lo in range(0, model.n_users, batch_size):
        users = np.arange(lo, min(lo + batch_size, model.n_users))
        scores = model.score(users)
        parts.append(top_k_from_scores(scores, K, mask[users] if mask is not None else None))
    items = np.vstack([p.items for p in parts])
    sc = np.vstack([p.scores for p in parts])
    short = tuple(u + lo for p, lo in zip(parts, range(0, model.n_users, batch_size))
                  for u in p.short_users)
    if short:
        log.warning("%d users have fewer than %d recommendable items", len(short), K)
    return RecommendationSet(items, sc, model.n_items, short)


def save_model(model: TrainedModel, path: str | Path):
    """Write an ``.npz`` checkpoint with a JSON header block."""
    header = {
        "format": "multibias-model",
        "version": CHECKPOINT_VERSION,
        "algorithm": model.algorithm,
        "config": model.config.to_dict(),
        "n_users": model.n_users,
        "n_items": model.n_items,
        "input_kind": model.input_kind,
        "loss_trace": model.loss_trace,
        "notes": model.notes,
    }
    arrays = {f"param__{k}": np.asarray(v) for k, v in model.params.items()}
    with Path(path).open("wb") as fh:
        np.savez_compressed(fh, header=np.array(json.dumps(header)), **arrays)


def load_model(path: str | Path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != "multibias-model":
            raise ValueError(f"{path} is not a model checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {header['version']} is newer than supported")
        params = {k[len("param__"):]: z[k] for k in z.files if k.startswith("param__")}
    return TrainedModel(
        algorithm=header["algorithm"],
        config=ModelConfig.from_dict(header["config"]),
        params=params,
        n_users=header["n_users"],
        n_items=header["n_items"],
        input_kind=header["input_kind"],
        loss_trace=header["loss_trace"],
        notes=header["notes"],
    )
