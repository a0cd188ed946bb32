"""Stand-alone writer for the portable feature-archive layout.

Implements the on-disk contract directly (manifest.json plus one
little-endian float32 blob per layer) so this package stays decoupled
from the toolkit that consumes the archives.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"FARC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQIII")


@dataclass(frozen=True)
class LayerSpec:
    index: int
    name: str
    channels: int
    width: int
    height: int


@dataclass(frozen=True)
class SampleSpec:
    id: str
    label: str
    split: str


def write_feature_archive(
    model_id: str,
    layers: Sequence[LayerSpec],
    samples: Sequence[SampleSpec],
    tensors: Mapping[tuple[int, str], np.ndarray],
    destination: str | Path,
    created_utc: str,
) -> Path:
    """Write one archive; every (layer, sample) pair must be present.

    Samples land in the given order inside each blob, so callers control
    the canonical ordering.
    """
    root = Path(destination)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": FORMAT_VERSION,
        "model_id": model_id,
        "layers": [
            {
                "index": layer.index,
                "name": layer.name,
                "channels": layer.channels,
                "width": layer.width,
                "height": layer.height,
            }
            for layer in layers
        ],
        "samples": [
            {"id": sample.id, "label": sample.label, "split": sample.split}
            for sample in samples
        ],
        "created_utc": created_utc,
    }
    (root / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    for layer in layers:
        elements = layer.channels * layer.width * layer.height
        with open(root / f"layer_{layer.index}.bin", "wb") as fh:
            fh.write(
                _HEADER.pack(
                    MAGIC,
                    FORMAT_VERSION,
                    layer.index,
                    len(samples),
                    layer.channels,
                    layer.width,
                    layer.height,
                )
            )
            for sample in samples:
                values = np.ascontiguousarray(
                    tensors[(layer.index, sample.id)], dtype="<f4"
                ).reshape(-1)
                if values.size != elements:
                    raise ValueError(
                        f"tensor for {sample.id!r} at layer {layer.index} has "
                        f"{values.size} values, expected {elements}"
                    )
                fh.write(values.tobytes())
    return root
