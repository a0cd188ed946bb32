"""Deterministic synthetic multi-layer activation archives.

Every byte is a pure function of the config: weights, biases and latent
draws come from fixed splitmix64 substreams with Box-Muller sampling, so
fixtures reproduce bit-exactly across runs and platforms.  OOD mode adds
a constant pre-activation shift from a chosen layer onward, which gives a
controlled depth at which ID/OOD separability first appears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .archive import (
    FORMAT_VERSION,
    SPLITS,
    Archive,
    LayerDescriptor,
    LayerTensor,
    Manifest,
    SampleRecord,
    write_archive,
)

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# fixed domain tags keeping weight and latent substreams apart
_DOMAIN_WEIGHTS = 0x8D3F5E21A7C94B63
_DOMAIN_SAMPLES = 0x243F6A8885A308D3


def prng_next(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (value, next_state), all mod 2**64."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31), state


class SplitMix64:
    """Stateful splitmix64 stream with uniform and normal helpers."""

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next_u64(self) -> int:
        value, self.state = prng_next(self.state)
        return value

    def uniform(self) -> float:
        # 53-bit uniform in (0, 1); zero is rejected so log(u) stays finite
        while True:
            u = (self.next_u64() >> 11) * 2.0**-53
            if u != 0.0:
                return u

    def normals(self, count: int) -> np.ndarray:
        """Standard normals via Box-Muller on uniform pairs.

        Values come in cos/sin pairs; an odd count discards the trailing
        value instead of carrying it into the next block.
        """
        values: list[float] = []
        while len(values) < count:
            u1 = self.uniform()
            u2 = self.uniform()
            radius = math.sqrt(-2.0 * math.log(u1))
            values.append(radius * math.cos(2.0 * math.pi * u2))
            values.append(radius * math.sin(2.0 * math.pi * u2))
        return np.array(values[:count])


def _substream(seed: int, domain: int, index: int) -> SplitMix64:
    value, _ = prng_next((seed ^ domain) & _MASK)
    value, _ = prng_next((value ^ index) & _MASK)
    return SplitMix64(value)


@dataclass
class SynthConfig:
    seed: int = 7
    num_layers: int = 4
    channels: Sequence[int] = (4, 6, 8, 8)
    spatial: Sequence[tuple[int, int]] = ((4, 4), (3, 3), (2, 2), (2, 2))
    latent_dim: int = 8
    n_samples: int = 64
    mode: str = "id"
    shift_layer: int = 1
    shift_magnitude: float = 4.0
    split: str | None = None  # None: "train" for id mode, "tune" for ood mode
    first_sample_index: int = 0  # offset keeping archives from one seed disjoint
    model_id: str = "synth"

    def validate(self) -> None:
        if self.num_layers < 2:
            raise ValueError(f"num_layers must be >= 2, got {self.num_layers}")
        if len(self.channels) != self.num_layers or len(self.spatial) != self.num_layers:
            raise ValueError("channels and spatial must list one entry per layer")
        if any(k < 1 for k in self.channels):
            raise ValueError("channel counts must be >= 1")
        if any(w < 1 or h < 1 for w, h in self.spatial):
            raise ValueError("spatial sizes must be >= 1")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be >= 0, got {self.n_samples}")
        if self.mode not in ("id", "ood"):
            raise ValueError(f"mode must be 'id' or 'ood', got {self.mode!r}")
        if not 0 <= self.shift_layer < self.num_layers:
            raise ValueError(f"shift_layer must be in [0, {self.num_layers}), got {self.shift_layer}")
        if self.shift_magnitude < 0.0:
            raise ValueError(f"shift_magnitude must be >= 0, got {self.shift_magnitude}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.first_sample_index < 0:
            raise ValueError("first_sample_index must be >= 0")

    def effective_split(self) -> str:
        if self.split is not None:
            return self.split
        return "train" if self.mode == "id" else "tune"


def _layer_weights(config: SynthConfig, layer: int) -> tuple[np.ndarray, np.ndarray]:
    channels = config.channels[layer]
    width, height = config.spatial[layer]
    units = channels * width * height
    stream = _substream(config.seed, _DOMAIN_WEIGHTS, layer)
    weight = stream.normals(units * config.latent_dim).reshape(units, config.latent_dim)
    weight /= math.sqrt(config.latent_dim)
    bias = stream.normals(units) * 0.1
    return weight, bias


def generate_archive(config: SynthConfig, destination: str | Path) -> Archive:
    """Write a synthetic feature archive derived purely from the config.

    Each layer's activation is relu(W_l z + b_l) of a per-sample latent z;
    in ood mode the pre-activation additionally gains shift_magnitude at
    layers >= shift_layer, so earlier layers stay distributionally
    identical to id mode under the same seed.
    """
    config.validate()
    layers = [
        LayerDescriptor(l, f"act_{l}", config.channels[l], *config.spatial[l])
        for l in range(config.num_layers)
    ]
    label = config.mode
    split = config.effective_split()
    samples = [
        SampleRecord(f"s{config.first_sample_index + i:06d}", label, split)
        for i in range(config.n_samples)
    ]
    weights = [_layer_weights(config, l) for l in range(config.num_layers)]
    tensors: list[LayerTensor] = []
    for i, record in enumerate(samples):
        latent = _substream(config.seed, _DOMAIN_SAMPLES, config.first_sample_index + i)
        z = latent.normals(config.latent_dim)
        for l, (weight, bias) in enumerate(weights):
            pre = weight @ z + bias
            if config.mode == "ood" and l >= config.shift_layer and config.shift_magnitude != 0.0:
                pre = pre + config.shift_magnitude
            activation = np.maximum(pre, 0.0).astype(np.float32)
            tensors.append(
                LayerTensor(
                    l,
                    record.id,
                    config.channels[l],
                    config.spatial[l][0],
                    config.spatial[l][1],
                    activation,
                )
            )
    manifest = Manifest(
        format_version=FORMAT_VERSION,
        model_id=config.model_id,
        layers=layers,
        samples=samples,
        created_utc="1970-01-01T00:00:00Z",  # fixed so archives are byte-reproducible
    )
    return write_archive(manifest, tensors, destination)
