"""Batch export of activation layers from an image folder to an archive.

Inference runs sample-by-sample on CPU in eval mode with gradients off,
so exporting the same folder twice yields element-wise identical tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .archive_writer import LayerSpec, SampleSpec, write_feature_archive
from .capture import ActivationTap, load_model

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff", ".webp")


class ExportError(Exception):
    """The export cannot produce a valid archive."""


@dataclass
class ExportSpec:
    checkpoint: str | Path
    layers: list[str]
    images: str | Path
    out: str | Path
    backbone: str = "generic"
    image_size: int = 224
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    label: str = "id"
    split: str = "train"
    model_id: str | None = None
    created_utc: str | None = None

    def validate(self) -> None:
        if not self.layers:
            raise ExportError("at least one activation layer must be selected")
        if self.label not in ("id", "ood", "unknown"):
            raise ExportError(f"label must be id/ood/unknown, got {self.label!r}")
        if self.split not in ("train", "validation", "tune", "test"):
            raise ExportError(f"split must be train/validation/tune/test, got {self.split!r}")
        if self.image_size < 1:
            raise ExportError(f"image_size must be positive, got {self.image_size}")


@dataclass
class ExportSummary:
    archive: Path
    exported: int
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (filename, reason)


def _load_image(path: Path, size: int, mean, std) -> torch.Tensor:
    with Image.open(path) as image:
        rgb = image.convert("RGB").resize((size, size), Image.BILINEAR)
    array = np.asarray(rgb, dtype=np.float32) / 255.0
    array = (array - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    # HWC -> CHW, batch of one
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)))[None, :]


def _per_sample_shape(output: torch.Tensor) -> tuple[int, ...]:
    return tuple(output.shape[1:]) if output.dim() > 1 else tuple(output.shape)


def _layer_dims(name: str, per_sample: tuple[int, ...]) -> tuple[int, int, int]:
    """(channels, width, height) for the manifest; vectors become K x 1 x 1."""
    if len(per_sample) == 3:
        channels, height, width = per_sample
        return int(channels), int(width), int(height)
    if len(per_sample) == 1:
        return int(per_sample[0]), 1, 1
    raise ExportError(f"layer {name!r} has unsupported output shape {per_sample}")


def _flatten(output: torch.Tensor) -> np.ndarray:
    # channel-major, row-major within a channel
    return output[0].contiguous().cpu().numpy().astype(np.float32).reshape(-1)


def export(spec: ExportSpec) -> ExportSummary:
    """Run inference over the image folder and write a feature archive.

    Images are processed in sorted filename order; undecodable files are
    skipped and reported.  The requested layer names must appear in
    forward order.  No archive is written when no image survives.
    """
    spec.validate()
    model = load_model(spec.checkpoint, spec.backbone)
    torch.manual_seed(0)  # inference is deterministic; seed guards stray randomness
    image_dir = Path(spec.images)
    if not image_dir.is_dir():
        raise ExportError(f"image folder {image_dir} does not exist")
    files = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    if not files:
        raise ExportError(f"no image files found in {image_dir}")
    tap = ActivationTap(model)
    try:
        probe = tap.run(torch.zeros(1, 3, spec.image_size, spec.image_size))
        missing = [name for name in spec.layers if name not in probe]
        if missing:
            known = ", ".join(probe)
            raise ExportError(f"layers {missing} were not captured; known layers: {known}")
        forward_order = [name for name in probe if name in set(spec.layers)]
        if forward_order != list(spec.layers):
            raise ExportError(
                f"layers must be given in forward order {forward_order}, got {list(spec.layers)}"
            )
        probe_shapes = {name: _per_sample_shape(probe[name]) for name in spec.layers}
        tensors: dict[tuple[int, str], np.ndarray] = {}
        samples: list[SampleSpec] = []
        skipped: list[tuple[str, str]] = []
        for path in files:
            try:
                batch = _load_image(path, spec.image_size, spec.mean, spec.std)
            except Exception as exc:
                skipped.append((path.name, str(exc)))
                continue
            captured = tap.run(batch)
            for index, name in enumerate(spec.layers):
                output = captured[name]
                if _per_sample_shape(output) != probe_shapes[name]:
                    raise ExportError(
                        f"layer {name!r} produced shape {_per_sample_shape(output)} for "
                        f"{path.name}, expected {probe_shapes[name]}"
                    )
                tensors[(index, path.name)] = _flatten(output)
            samples.append(SampleSpec(path.name, spec.label, spec.split))
    finally:
        tap.close()
    if not samples:
        raise ExportError(f"no exportable images in {image_dir}: all {len(skipped)} failed")
    layers = [
        LayerSpec(index, name, *_layer_dims(name, probe_shapes[name]))
        for index, name in enumerate(spec.layers)
    ]
    created = spec.created_utc or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    model_id = spec.model_id or f"{spec.backbone}:{Path(spec.checkpoint).name}"
    archive = write_feature_archive(model_id, layers, samples, tensors, spec.out, created)
    return ExportSummary(archive, len(samples), skipped)
