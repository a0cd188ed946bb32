"""Gram-matrix deviation detector for the last captured layer.

Channel co-activation is summarized by row sums of G = r r^T, where r
stacks each channel's flattened spatial map with entries raised to an
integer power.  Training data fixes per-channel row-sum bounds in a
globally min-max scaled space; at test time, distance outside the bounds
is normalized by the mean deviation of a held-out ID validation split so
layers become comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .archive import LayerTensor
from .ops import rectify

EPS = 1e-12


@dataclass
class GramStats:
    """Per-layer bounds learned on ID training data.

    channel_min/channel_max live in the normalized row-sum space defined
    by norm_lo/norm_hi (the global training row-sum range).
    """

    layer_index: int
    p: int
    channel_min: np.ndarray
    channel_max: np.ndarray
    norm_lo: float
    norm_hi: float
    expected_deviation: float

    @property
    def channels(self) -> int:
        return int(self.channel_min.size)


def gram_row_sums(tensor: LayerTensor, p: int = 1) -> np.ndarray:
    """Row sums of the order-p Gram matrix of channel co-activations.

    out[k] = sum_k' <r_k, r_k'> with r_k the k-th channel's flattened
    spatial map raised element-wise to the p-th power.
    """
    if p < 1:
        raise ValueError(f"order must be >= 1, got {p}")
    r = tensor.spatial().astype(np.float64)
    if p != 1:
        r = r**p
    g = r @ r.T
    return g.sum(axis=1)


def _deviation_sum(normalized: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Summed per-channel distance outside [lo, hi], scaled by |bound|."""
    below = normalized < lo
    above = normalized > hi
    # a zero bound would make the scale-normalization divide by zero
    denom_lo = np.where(lo == 0.0, EPS, np.abs(lo))
    denom_hi = np.where(hi == 0.0, EPS, np.abs(hi))
    per_channel = np.where(below, (lo - normalized) / denom_lo, 0.0) + np.where(
        above, (normalized - hi) / denom_hi, 0.0
    )
    return float(per_channel.sum())


def fit_gram_stats(
    train_tensors: Iterable[LayerTensor],
    validation_tensors: Iterable[LayerTensor],
    p: int = 1,
    rectify_c: float = 1.0,
) -> GramStats:
    """Learn row-sum bounds on ID training data.

    Args:
        train_tensors: ID training activations of one layer.
        validation_tensors: held-out ID activations, disjoint from training;
            their mean deviation becomes the normalizer (floored at EPS so
            later divisions stay defined).
        p: Gram order; 1 is the supported default.
        rectify_c: clip threshold applied before any Gram computation.
    """
    train = list(train_tensors)
    validation = list(validation_tensors)
    if not train:
        raise ValueError("fit_gram_stats needs at least one training tensor")
    channels = train[0].channels
    layer_index = train[0].layer_index
    for tensor in train + validation:
        if tensor.channels != channels:
            raise ValueError(
                f"channel-count mismatch: sample {tensor.sample_id!r} has "
                f"{tensor.channels} channels, expected {channels}"
            )
    sums = np.stack([gram_row_sums(rectify(t, rectify_c), p) for t in train])
    norm_lo = float(sums.min())
    norm_hi = float(sums.max())
    if norm_hi == norm_lo:
        norm_hi = norm_lo + 1.0
    normalized = (sums - norm_lo) / (norm_hi - norm_lo)
    channel_min = normalized.min(axis=0)
    channel_max = normalized.max(axis=0)
    if validation:
        deviations = []
        for tensor in validation:
            g = (gram_row_sums(rectify(tensor, rectify_c), p) - norm_lo) / (norm_hi - norm_lo)
            deviations.append(_deviation_sum(g, channel_min, channel_max))
        expected = float(np.mean(deviations))
    else:
        expected = 0.0
    if expected < EPS:
        expected = EPS
    return GramStats(layer_index, p, channel_min, channel_max, norm_lo, norm_hi, expected)


def deviation(stats: GramStats, tensor: LayerTensor, rectify_c: float = 1.0) -> float:
    """Normalized deviation of one sample; 0 inside the learned bounds.

    Larger is more OOD-like.  Any tensor the bounds were fitted on comes
    back as exactly 0.
    """
    if tensor.channels != stats.channels:
        raise ValueError(
            f"channel-count mismatch: tensor has {tensor.channels} channels, "
            f"stats expect {stats.channels}"
        )
    sums = gram_row_sums(rectify(tensor, rectify_c), stats.p)
    normalized = (sums - stats.norm_lo) / (stats.norm_hi - stats.norm_lo)
    return _deviation_sum(normalized, stats.channel_min, stats.channel_max) / stats.expected_deviation


def total_deviation(
    stats_by_layer: Mapping[int, GramStats],
    tensors_by_layer: Mapping[int, LayerTensor],
    rectify_c: float = 1.0,
) -> float:
    """Summed deviation across several fitted layers (all-layer variant)."""
    return float(
        sum(
            deviation(stats_by_layer[index], tensors_by_layer[index], rectify_c)
            for index in sorted(stats_by_layer)
        )
    )
