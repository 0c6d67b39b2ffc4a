"""
Clip-ranking metrics. Ranking is by descending score with ties broken by
ascending clip index, so every metric is deterministic.
"""

import math

import numpy as np

from cfsum.errors import ContractError, ShapeError, UndefinedAPError


def _check(scores, positives):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    positives = np.asarray(positives, dtype=bool).reshape(-1)
    if scores.size != positives.size:
        raise ShapeError(f"{scores.size} scores for {positives.size} labels")
    if scores.size == 0:
        raise ContractError("cannot rank an empty clip list")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    return scores, positives


def binarize_labels(saliency, threshold: float) -> np.ndarray:
    """Positive iff saliency >= threshold."""
    values = np.asarray(saliency, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ContractError("labels must be finite")
    return values >= threshold


def ranking(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    return np.argsort(-scores, kind="stable")


def average_precision(scores, positives) -> float:
    scores, positives = _check(scores, positives)
    n_positive = int(positives.sum())
    if n_positive == 0:
        raise UndefinedAPError("average precision is undefined for a sample with no positive clip")
    hits = positives[ranking(scores)]
    precision_at_rank = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return math.fsum(precision_at_rank[hits].tolist()) / n_positive


def hit_at_1(scores, positives) -> int:
    scores, positives = _check(scores, positives)
    return int(positives[ranking(scores)[0]])


def chance_average_precision(n_clips: int, n_positives: int) -> float:
    """Expected AP of a uniformly random ranking of n_clips clips holding n_positives positives."""
    if not 0 < n_positives <= n_clips:
        raise ContractError(f"need 0 < positives <= clips, got {n_positives} of {n_clips}")
    if n_clips == 1:
        return 1.0
    # a positive's precision counts itself once and each other positive with probability (p - 1) / (n - 1)
    others = (n_positives - 1) / (n_clips - 1)
    harmonic = math.fsum(1.0 / k for k in range(1, n_clips + 1))
    return others + (1.0 - others) * harmonic / n_clips
