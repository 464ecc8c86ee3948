"""Rating data: loading, k-core filtering and per-user train/test splitting."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DataError",
    "RatingScale",
    "RatingMatrix",
    "SplitPair",
    "load_ratings",
    "write_ratings",
    "write_remap",
    "filter_kcore",
    "split_per_user",
]


class DataError(ValueError):
    """Raised for malformed, inconsistent or over-filtered rating data."""


@dataclass(frozen=True)
class RatingScale:
    levels: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 2:
            raise DataError(f"a rating scale needs at least two levels, got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise DataError(f"rating levels must be strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def integer(cls, lo: int, hi: int) -> RatingScale:
        return cls(tuple(range(lo, hi + 1)))

    @property
    def min_value(self) -> float:
        return self.levels[0]

    @property
    def max_value(self) -> float:
        return self.levels[-1]

    def __len__(self):
        return len(self.levels)


class Interactions:
    """Shared accessors for sparse (user, item, value) containers.

    Subclasses are frozen dataclasses with ``users``, ``items``, ``values``,
    ``n_users`` and ``n_items`` attributes, entries sorted by (user, item).
    """

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    n_users: int
    n_items: int

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def __len__(self):
        return self.nnz

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, (self.users, self.items)), shape=(self.n_users, self.n_items)
        )

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        out = np.full((self.n_users, self.n_items), fill, dtype=np.float64)
        out[self.users, self.items] = self.values
        return out

    def mask(self) -> np.ndarray:
        out = np.zeros((self.n_users, self.n_items), dtype=bool)
        out[self.users, self.items] = True
        return out

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def user_items(self) -> list[np.ndarray]:
        """Item ids of every user's profile, in ascending id order."""
        bounds = np.searchsorted(self.users, np.arange(self.n_users + 1))
        return [self.items[bounds[u] : bounds[u + 1]] for u in range(self.n_users)]

    def external_user(self, u: int) -> str:
        ids = getattr(self, "user_ids", None)
        return ids[u] if ids is not None else str(u)

    def external_item(self, i: int) -> str:
        ids = getattr(self, "item_ids", None)
        return ids[i] if ids is not None else str(i)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray([self.n_users, self.n_items], dtype=np.int64).tobytes())
        h.update(self.users.astype(np.int64).tobytes())
        h.update(self.items.astype(np.int64).tobytes())
        h.update(self.values.astype(np.float64).tobytes())
        return h.hexdigest()[:16]


def _canonical(users, items, values):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((items, users))
    return users[order], items[order], values[order]


@dataclass(frozen=True)
class RatingMatrix(Interactions):
    """Explicit ratings of ``n_users`` users on ``n_items`` items.

    ``user_ids``/``item_ids`` hold the external (string) id of every internal
    index and form the remap table written next to derived files.
    """

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    n_users: int
    n_items: int
    scale: RatingScale
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        users, items, values = _canonical(self.users, self.items, self.values)
        for name, arr in (("users", users), ("items", items), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (users.shape == items.shape == values.shape):
            raise DataError("users, items and values must have equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise DataError("item index out of range")
            dup = (np.diff(users) == 0) & (np.diff(items) == 0)
            if dup.any():
                raise DataError("more than one entry for a (user, item) pair")
            bad = ~np.isin(values, np.asarray(self.scale.levels))
            if bad.any():
                raise DataError(
                    f"value {values[bad][0]!r} is not a level of the scale {self.scale.levels}"
                )
        if self.user_ids is not None and len(self.user_ids) != self.n_users:
            raise DataError("user_ids length does not match n_users")
        if self.item_ids is not None and len(self.item_ids) != self.n_items:
            raise DataError("item_ids length does not match n_items")

    @classmethod
    def from_triples(
        cls,
        triples: Sequence[tuple[int, int, float]],
        n_users: int | None = None,
        n_items: int | None = None,
        scale: RatingScale | None = None,
    ) -> RatingMatrix:
        """Build from internal-id triples (mostly for tests and fixtures)."""
        arr = np.asarray(triples, dtype=np.float64).reshape(-1, 3)
        users = arr[:, 0].astype(np.int64)
        items = arr[:, 1].astype(np.int64)
        if n_users is None:
            n_users = int(users.max()) + 1 if users.size else 0
        if n_items is None:
            n_items = int(items.max()) + 1 if items.size else 0
        if scale is None:
            scale = _infer_scale(arr[:, 2])
        return cls(users, items, arr[:, 2], n_users, n_items, scale)

    def with_values(self, values: np.ndarray) -> RatingMatrix:
        """Same sparsity pattern, new values (must be scale levels)."""
        return RatingMatrix(
            self.users, self.items, values, self.n_users, self.n_items,
            self.scale, self.user_ids, self.item_ids,
        )

    def subset(self, keep: np.ndarray) -> RatingMatrix:
        """Entries selected by boolean mask ``keep``; ids are not recompacted."""
        return RatingMatrix(
            self.users[keep], self.items[keep], self.values[keep],
            self.n_users, self.n_items, self.scale, self.user_ids, self.item_ids,
        )


@dataclass(frozen=True)
class SplitPair:
    train: RatingMatrix
    test: RatingMatrix
    seed: int
    ratio: float


def _infer_scale(values: np.ndarray) -> RatingScale:
    levels = np.unique(values)
    if levels.size < 2:
        raise DataError(
            f"cannot infer a rating scale from a single distinct value {levels.tolist()}; "
            "pass an explicit scale"
        )
    return RatingScale(tuple(levels.tolist()))


def load_ratings(
    path: str | Path,
    delimiter: str | None = "\t",
    header: bool = False,
    scale: RatingScale | None = None,
    remap_dir: str | Path | None = None,
    reference: RatingMatrix | None = None,
) -> RatingMatrix:
    """Parse ``user<delim>item<delim>rating`` lines into a :class:`RatingMatrix`.

    ``delimiter=None`` splits on any whitespace. Extra trailing columns
    (e.g. timestamps) are ignored. Internal ids are assigned in order of
    first appearance. Repeated identical lines are collapsed; a repeated
    pair with a different rating is an error naming both lines.

    With ``reference`` the ids, dimensions and scale of that matrix are
    reused (e.g. to read a train/test file of an ingested dataset); an id
    the reference does not know is an error.
    """
    path = Path(path)
    frozen = reference is not None
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    if frozen:
        user_index = {reference.external_user(u): u for u in range(reference.n_users)}
        item_index = {reference.external_item(i): i for i in range(reference.n_items)}
        scale = scale or reference.scale
    seen: dict[tuple[int, int], tuple[float, int]] = {}
    users, items, values = [], [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter) if delimiter is not None else line.split()
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected user, item, rating; got {line!r}")
            ext_u, ext_i = parts[0].strip(), parts[1].strip()
            try:
                value = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: rating {parts[2]!r} is not a number") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{lineno}: rating {parts[2]!r} is not finite")
            if frozen and (ext_u not in user_index or ext_i not in item_index):
                raise DataError(f"{path}:{lineno}: unknown user or item id ({ext_u!r}, {ext_i!r})")
            u = user_index.setdefault(ext_u, len(user_index))
            i = item_index.setdefault(ext_i, len(item_index))
            prev = seen.get((u, i))
            if prev is not None:
                if prev[0] != value:
                    raise DataError(
                        f"{path}: conflicting ratings for user {ext_u!r}, item {ext_i!r} "
                        f"on lines {prev[1]} and {lineno}"
                    )
                continue
            seen[(u, i)] = (value, lineno)
            users.append(u)
            items.append(i)
            values.append(value)
    if not values:
        raise DataError(f"{path}: no ratings found")
    values_arr = np.asarray(values, dtype=np.float64)
    if scale is None:
        scale = _infer_scale(values_arr)
    matrix = RatingMatrix(
        np.asarray(users), np.asarray(items), values_arr,
        len(user_index), len(item_index), scale,
        tuple(user_index), tuple(item_index),
    )
    if remap_dir is not None:
        write_remap(matrix, remap_dir)
    return matrix


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def write_ratings(matrix, path: str | Path, delimiter: str = "\t", external: bool = True):
    """Write entries back in the input format. Works for percentile matrices too."""
    uid = getattr(matrix, "external_user", None) if external else None
    iid = getattr(matrix, "external_item", None) if external else None
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, i, v in zip(matrix.users.tolist(), matrix.items.tolist(), matrix.values.tolist()):
            su = uid(u) if uid else str(u)
            si = iid(i) if iid else str(i)
            fh.write(f"{su}{delimiter}{si}{delimiter}{_fmt(v)}\n")


def write_remap(matrix: RatingMatrix, directory: str | Path, delimiter: str = "\t"):
    """Write ``users.map`` and ``items.map`` as ``<external>\\t<internal>`` lines."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, n, ext in (
        ("users.map", matrix.n_users, matrix.external_user),
        ("items.map", matrix.n_items, matrix.external_item),
    ):
        with (directory / name).open("w", encoding="utf-8") as fh:
            for k in range(n):
                fh.write(f"{ext(k)}{delimiter}{k}\n")


def _compact(matrix: RatingMatrix, keep_users: np.ndarray, keep_items: np.ndarray) -> RatingMatrix:
    new_u = np.cumsum(keep_users) - 1
    new_i = np.cumsum(keep_items) - 1
    entry = keep_users[matrix.users] & keep_items[matrix.items]
    uids = tuple(matrix.external_user(u) for u in np.flatnonzero(keep_users))
    iids = tuple(matrix.external_item(i) for i in np.flatnonzero(keep_items))
    return RatingMatrix(
        new_u[matrix.users[entry]], new_i[matrix.items[entry]], matrix.values[entry],
        int(keep_users.sum()), int(keep_items.sum()), matrix.scale, uids, iids,
    )


def filter_kcore(matrix: RatingMatrix, min_user_ratings: int, min_item_ratings: int) -> RatingMatrix:
    """Drop users/items below the thresholds until no violation remains.

    Removing an item can push a user under its threshold and vice versa, so
    the pruning loops to a fixed point. Ids are recompacted; external ids
    follow the survivors.
    """
    if min_user_ratings < 1 or min_item_ratings < 1:
        raise ValueError("thresholds must be >= 1")
    keep_u = np.ones(matrix.n_users, dtype=bool)
    keep_i = np.ones(matrix.n_items, dtype=bool)
    while True:
        live = keep_u[matrix.users] & keep_i[matrix.items]
        ucount = np.bincount(matrix.users[live], minlength=matrix.n_users)
        icount = np.bincount(matrix.items[live], minlength=matrix.n_items)
        new_u = keep_u & (ucount >= min_user_ratings)
        new_i = keep_i & (icount >= min_item_ratings)
        if np.array_equal(new_u, keep_u) and np.array_equal(new_i, keep_i):
            break
        keep_u, keep_i = new_u, new_i
    if not keep_u.any() or not keep_i.any():
        raise DataError(
            f"over-filtered: no data survives thresholds ({min_user_ratings}, {min_item_ratings})"
        )
    return _compact(matrix, keep_u, keep_i)


def train_size(profile_size: int, ratio: float) -> int:
    """Number of a user's ratings that go to training (round half up)."""
    if profile_size <= 1:
        return profile_size
    n = math.floor(ratio * profile_size + 0.5 + 1e-12)
    return min(max(n, 1), profile_size - 1) if ratio * profile_size >= 1 else n


def split_per_user(matrix: RatingMatrix, ratio: float = 0.8, seed: int = 0) -> SplitPair:
    """Random per-user holdout: each user's profile is split independently.

    A user with a single rating keeps it in training and contributes
    nothing to the test set.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    in_train = np.zeros(matrix.nnz, dtype=bool)
    bounds = np.searchsorted(matrix.users, np.arange(matrix.n_users + 1))
    for u in range(matrix.n_users):
        lo, hi = bounds[u], bounds[u + 1]
        s = hi - lo
        if s == 0:
            continue
        n_train = train_size(s, ratio)
        chosen = rng.permutation(s)[:n_train]
        in_train[lo + chosen] = True
    return SplitPair(matrix.subset(in_train), matrix.subset(~in_train), seed, ratio)
