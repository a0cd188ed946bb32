"""Detection metrics over ID/OOD score populations.

All metrics treat higher scores as more ID-like and count equality on the
ID side, matching the threshold calibration used by the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreSet:
    """ID and OOD score populations (higher = more ID-like)."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self) -> None:
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64)
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64)


def _checked(s: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    if s.id_scores.size == 0 or s.ood_scores.size == 0:
        raise ValueError("both score sets must be non-empty")
    if not (np.isfinite(s.id_scores).all() and np.isfinite(s.ood_scores).all()):
        raise ValueError("scores must be finite")
    return s.id_scores, s.ood_scores


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged; exact on half-integers."""
    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < sorted_values.size:
        j = i
        while j + 1 < sorted_values.size and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(s: ScoreSet) -> float:
    """Probability a random ID score exceeds a random OOD score, ties 1/2.

    Computed from rank statistics; equals brute-force pair counting
    exactly because all intermediate sums are half-integers.
    """
    ids, oods = _checked(s)
    n, m = ids.size, oods.size
    ranks = _midranks(np.concatenate((ids, oods)))
    u = ranks[:n].sum() - 0.5 * n * (n + 1)
    return float(u / (n * m))


def _candidate_thresholds(values: np.ndarray) -> np.ndarray:
    distinct = np.unique(values)
    midpoints = 0.5 * (distinct[:-1] + distinct[1:])
    return np.concatenate(([distinct[0] - 1.0], distinct, midpoints, [distinct[-1] + 1.0]))


def detection_accuracy(s: ScoreSet) -> float:
    """Best balanced accuracy over all thresholds (equal class priors).

    Scanning the distinct scores, the midpoints between them and one
    sentinel outside each end is sufficient to attain the maximum.
    """
    ids, oods = _checked(s)
    candidates = _candidate_thresholds(np.concatenate((ids, oods)))
    accuracy = 0.5 * (
        (ids[None, :] >= candidates[:, None]).mean(axis=1)
        + (oods[None, :] < candidates[:, None]).mean(axis=1)
    )
    return float(accuracy.max())


def min_count_for_fraction(n: int, target: float) -> int:
    """Smallest k with k/n >= target, robust to rounding in target*n."""
    k = max(1, math.ceil(target * n))
    k = min(k, n)
    while k > 1 and (k - 1) / n >= target:
        k -= 1
    while k < n and k / n < target:
        k += 1
    return k


def tnr_at_tpr(s: ScoreSet, tpr_target: float = 0.95) -> float:
    """TNR at the largest threshold that keeps TPR at or above the target.

    The threshold lands on an ID score value (equality counts as ID), so
    discrete score sets evaluate exactly.
    """
    ids, oods = _checked(s)
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    k = min_count_for_fraction(ids.size, tpr_target)
    threshold = np.sort(ids)[ids.size - k]
    return float((oods < threshold).mean())
