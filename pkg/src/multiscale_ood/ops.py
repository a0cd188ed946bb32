"""Activation clipping and spatial feature reduction.

Both detector paths see the same preprocessing order: clip the raw layer
output from above first, then reduce (SVM path) or correlate (Gram path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .archive import LayerTensor


@dataclass
class ChannelVector:
    """Per-channel summary of one sample at one layer (length = channels)."""

    values: np.ndarray
    layer_index: int
    sample_id: str


def rectify(tensor: LayerTensor, c: float) -> LayerTensor:
    """Clip activations from above: out[i] = min(in[i], c).

    One-sided on purpose: negative values pass through unchanged, only
    abnormally high activations are suppressed.
    """
    if not math.isfinite(c):
        raise ValueError(f"clip threshold must be finite, got {c}")
    return LayerTensor(
        tensor.layer_index,
        tensor.sample_id,
        tensor.channels,
        tensor.width,
        tensor.height,
        np.minimum(tensor.values, c),
    )


def reduce_spatial(tensor: LayerTensor) -> ChannelVector:
    """Mean absolute activation per channel: (K, w, h) -> length-K vector."""
    per_channel = np.abs(tensor.spatial().astype(np.float64, copy=False)).mean(axis=1)
    return ChannelVector(per_channel, tensor.layer_index, tensor.sample_id)
