"""Desk-scale rating data with tunable popularity and positivity skew.

Items are sampled into user profiles with power-law popularity, tilted
toward items matching the user's latent taste. A rating
comes from a latent score combining user-item affinity, item quality, a
popularity term (the coupling that makes high ratings concentrate on
popular items) and noise, cut into levels at equally spaced thresholds.

The defaults are the acceptance fixture. The convex popularity boost makes
a rating on a head item nearly twice as likely to be a top rating as one on
a tail item.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import RatingMatrix, RatingScale


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 500
    n_items: int = 300
    mean_profile: float = 40.0
    min_profile: int = 10
    popularity_exponent: float = 1.0   # item weight ∝ (popularity rank + 1) ** -exponent
    coupling: float = 3.0              # rating boost of the most popular item
    coupling_shape: float = 3.0        # boost of an item = coupling * popularity percentile ** shape
    positivity: float = -1.0           # shift of the latent score before cutting into levels
    affinity: float = 1.25
    selection: float = 1.5             # how strongly users pick items they like (0: popularity only)
    quality: float = 0.0
    noise: float = 0.4
    factors: int = 8
    levels: int = 5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def generate(config: SyntheticConfig = SyntheticConfig()) -> RatingMatrix:
    """Sample a rating matrix; deterministic for a fixed config."""
    c = config
    if c.n_items < c.min_profile + 1:
        raise ValueError("catalog too small for the minimum profile size")
    rng = np.random.default_rng(c.seed)
    weight = (np.arange(c.n_items) + 1.0) ** -c.popularity_exponent
    weight = weight[rng.permutation(c.n_items)]
    prob = weight / weight.sum()
    pop_pct = 1.0 - np.argsort(np.argsort(-weight)) / max(c.n_items - 1, 1)
    boost = c.coupling * pop_pct ** c.coupling_shape

    P = rng.standard_normal((c.n_users, c.factors)) / np.sqrt(c.factors)
    Q = rng.standard_normal((c.n_items, c.factors))
    item_quality = rng.standard_normal(c.n_items)
    user_bias = 0.3 * rng.standard_normal(c.n_users)

    sizes = np.clip(rng.geometric(1.0 / (c.mean_profile - c.min_profile + 1), c.n_users) + c.min_profile - 1,
                    c.min_profile, c.n_items - 1)
    users, items = [], []
    for u in range(c.n_users):
        pu = prob * np.exp(c.selection * (Q @ P[u]))
        chosen = rng.choice(c.n_items, size=int(sizes[u]), replace=False, p=pu / pu.sum())
        users.append(np.full(chosen.size, u))
        items.append(np.sort(chosen))
    users = np.concatenate(users)
    items = np.concatenate(items)

    latent = (c.affinity * np.einsum("ij,ij->i", P[users], Q[items])
              + c.quality * item_quality[items]
              + boost[items]
              + user_bias[users]
              + c.positivity
              + c.noise * rng.standard_normal(users.size))
    # equally spaced cut points centred on zero; the positivity shift moves mass upward
    cuts = np.linspace(-1.5, 1.5, c.levels - 1)
    values = 1 + np.searchsorted(cuts, latent).astype(np.float64)
    return RatingMatrix(users, items, values, c.n_users, c.n_items, RatingScale.integer(1, c.levels))
