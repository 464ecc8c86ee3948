"""Bias diagnostics, head/tail segmentation, the positivity flip and the
per-item percentile transformation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Interactions, RatingMatrix, RatingScale

__all__ = [
    "BiasDiagnostics",
    "ItemSegmentation",
    "PercentileMatrix",
    "diagnose",
    "write_diagnostics",
    "popularity_order",
    "segment_head_tail",
    "flip_positivity",
    "percentile_transform",
]


def popularity_order(counts: np.ndarray) -> np.ndarray:
    """Item ids by rating count, most popular first; ties by ascending id."""
    return np.lexsort((np.arange(len(counts)), -np.asarray(counts)))


@dataclass(frozen=True)
class BiasDiagnostics:
    lorenz: np.ndarray            # (m + 1, 2): item fraction, cumulative rating fraction
    rating_histogram: dict[float, float]
    item_counts: np.ndarray
    item_means: np.ndarray        # NaN for unrated items


def diagnose(matrix: RatingMatrix) -> BiasDiagnostics:
    if matrix.nnz == 0:
        raise ValueError("cannot diagnose an empty rating matrix")
    counts = matrix.item_counts()
    sorted_counts = counts[popularity_order(counts)]
    cum = np.concatenate([[0.0], np.cumsum(sorted_counts) / counts.sum()])
    frac = np.arange(matrix.n_items + 1) / matrix.n_items
    cum[-1] = 1.0
    lorenz = np.column_stack([frac, cum])

    levels = np.asarray(matrix.scale.levels)
    level_idx = np.searchsorted(levels, matrix.values)
    hist = np.bincount(level_idx, minlength=len(levels)) / matrix.nnz
    sums = np.bincount(matrix.items, weights=matrix.values, minlength=matrix.n_items)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return BiasDiagnostics(
        lorenz=lorenz,
        rating_histogram={float(v): float(f) for v, f in zip(levels, hist)},
        item_counts=counts,
        item_means=means,
    )


def write_diagnostics(diag: BiasDiagnostics, out_dir: str | Path, matrix: RatingMatrix | None = None):
    """Emit lorenz.csv, rating_hist.csv and item_stats.csv into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "lorenz.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_fraction", "cumulative_rating_fraction"])
        w.writerows(diag.lorenz.tolist())
    with (out_dir / "rating_hist.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rating", "fraction"])
        w.writerows(diag.rating_histogram.items())
    with (out_dir / "item_stats.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "rating_count", "mean_rating"])
        for i, (c, m) in enumerate(zip(diag.item_counts.tolist(), diag.item_means.tolist())):
            name = matrix.external_item(i) if matrix is not None else i
            w.writerow([name, c, "" if math.isnan(m) else m])


@dataclass(frozen=True)
class ItemSegmentation:
    head: frozenset[int]
    tail: frozenset[int]
    coverage: float

    @property
    def n_items(self) -> int:
        return len(self.head) + len(self.tail)

    def tail_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_items, dtype=bool)
        mask[list(self.tail)] = True
        return mask

    def head_mask(self) -> np.ndarray:
        return ~self.tail_mask()


def segment_head_tail(matrix: Interactions, target_fraction: float = 0.2) -> ItemSegmentation:
    """Head = shortest popularity-ordered prefix holding >= target share of ratings."""
    if not 0.0 < target_fraction < 1.0:
        raise ValueError("target_fraction must be in (0, 1)")
    counts = matrix.item_counts()
    order = popularity_order(counts)
    total = counts.sum()
    if total == 0:
        return ItemSegmentation(frozenset(), frozenset(range(matrix.n_items)), 0.0)
    share = np.cumsum(counts[order]) / total
    cut = int(np.argmax(share >= target_fraction - 1e-12)) + 1
    head = order[:cut].tolist()
    tail = order[cut:].tolist()
    return ItemSegmentation(frozenset(head), frozenset(tail), float(share[cut - 1]))


def n_flipped_items(beta: float, n_items: int) -> int:
    return min(n_items, math.ceil(beta * n_items - 1e-9))


def flip_positivity(matrix: RatingMatrix, beta: float) -> RatingMatrix:
    """Turn top ratings on the ``beta`` most popular items into bottom ratings.

    Only entries equal to the scale maximum change; every item keeps its
    rating count, so the popularity distribution is untouched.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    top = popularity_order(matrix.item_counts())[: n_flipped_items(beta, matrix.n_items)]
    on_top = np.zeros(matrix.n_items, dtype=bool)
    on_top[top] = True
    values = matrix.values.copy()
    hit = on_top[matrix.items] & (values == matrix.scale.max_value)
    values[hit] = matrix.scale.min_value
    return matrix.with_values(values)


@dataclass(frozen=True)
class PercentileMatrix(Interactions):
    """Per-item percentile values on the sparsity pattern of a rating matrix."""

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    n_users: int
    n_items: int
    source_scale: RatingScale
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def profile_sizes(self) -> np.ndarray:
        """Ratings behind each item's percentiles; small sizes give coarse values."""
        return self.item_counts()


def percentile_transform(matrix: RatingMatrix) -> PercentileMatrix:
    """Map each rating to ``100 * position / (s + 1)`` within its item profile.

    ``position`` is the 1-based index of the *last* occurrence of the rating
    in the item's ascending-sorted profile (i.e. the count of ratings <= r)
    and ``s`` the profile size.
    """
    _, level = np.unique(matrix.values, return_inverse=True)
    n_levels = int(level.max()) + 1 if level.size else 1
    key = matrix.items * n_levels + level
    sorted_key = np.sort(key)
    counts = matrix.item_counts()
    start = np.concatenate([[0], np.cumsum(counts)])[matrix.items]
    position = np.searchsorted(sorted_key, key, side="right") - start
    values = 100.0 * position / (counts[matrix.items] + 1)
    return PercentileMatrix(
        matrix.users, matrix.items, values, matrix.n_users, matrix.n_items,
        matrix.scale, matrix.user_ids, matrix.item_ids,
    )
