"""Post-processing rerankers turning length-N initial lists into fair top-K lists."""
from __future__ import annotations

import logging
import time

from ..recset import RecommendationSet
from .base import (
    DEVIATIONS,
    METHODS,
    RerankConfig,
    RerankContext,
    RerankError,
    assemble,
    candidate_lists,
)
from .flow import FlowError, dm_assign, rerank_dm, rerank_fairmatch
from .simple import fastar_mtable, per_user

__all__ = [
    "METHODS",
    "RerankConfig",
    "RerankContext",
    "RerankError",
    "FlowError",
    "rerank",
    "run_timed",
    "fastar_mtable",
    "dm_assign",
]

log = logging.getLogger(__name__)


def rerank(initial: RecommendationSet, config: RerankConfig, context: RerankContext) -> RecommendationSet:
    """Select ``config.K`` items per user from the initial lists.

    Each output list is a duplicate-free subset of the user's initial list.
    Users whose list is shorter than K keep a shorter list and are listed in
    ``short_users``; users the method could not satisfy are listed in
    ``notes["flagged_users"]``.
    """
    if config.K > initial.K:
        raise RerankError(f"K={config.K} exceeds initial list length N={initial.K}")
    cands = candidate_lists(initial)
    if config.method == "DM":
        lists, flagged, notes = rerank_dm(cands, config)
    elif config.method == "FAIRMATCH":
        lists, flagged, notes = rerank_fairmatch(cands, config)
    else:
        lists, flagged, notes = per_user(config.method, cands, config, context)
    notes = dict(notes, method=config.method, flagged_users=flagged, deviation=DEVIATIONS[config.method])
    if flagged:
        log.warning("%s: %d users could not meet the constraint", config.method, len(flagged))
    if notes.get("overflow_used"):
        log.warning("DM: item capacities too tight, %d overflow units used", notes["overflow_units"])
    return assemble(lists, initial, config.K, notes)


def run_timed(initial: RecommendationSet, config: RerankConfig,
              context: RerankContext) -> tuple[RecommendationSet, float]:
    """:func:`rerank` plus its wall-clock time in seconds."""
    start = time.perf_counter()
    out = rerank(initial, config, context)
    return out, time.perf_counter() - start
