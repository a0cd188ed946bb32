"""Portable on-disk archives of per-layer network activations.

An archive is a directory holding ``manifest.json`` plus one
``layer_<index>.bin`` blob per declared layer.  Blobs store little-endian
float32 values, sample-major in manifest order and channel-major within a
sample, so re-reading yields bit-identical values on any platform.  The
format has no framework dependencies: anything that can dump float arrays
can produce or consume it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

LAYER_MAGIC = b"FARC"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

LABELS = ("id", "ood", "unknown")
SPLITS = ("train", "validation", "tune", "test")

# magic, version, layer_index, num_samples, channels, width, height
_HEADER = struct.Struct("<4sIIQIII")
_MAX_DIM = 0xFFFFFFFF


class ArchiveError(Exception):
    """Archive cannot be used as requested."""


class BadMagicError(ArchiveError):
    """A layer blob does not start with the expected magic bytes."""


class UnsupportedVersionError(ArchiveError):
    """Manifest or blob declares a version this code does not speak."""


class TruncatedBlobError(ArchiveError):
    """A layer blob is shorter than its header promises."""


@dataclass(frozen=True)
class LayerDescriptor:
    index: int
    name: str
    channels: int
    width: int
    height: int

    @property
    def elements(self) -> int:
        return self.channels * self.width * self.height


@dataclass(frozen=True)
class SampleRecord:
    id: str
    label: str
    split: str


@dataclass
class Manifest:
    format_version: int
    model_id: str
    layers: list[LayerDescriptor]
    samples: list[SampleRecord]
    created_utc: str

    def layer(self, index: int) -> LayerDescriptor:
        for descriptor in self.layers:
            if descriptor.index == index:
                return descriptor
        raise ArchiveError(f"layer {index} is not declared in the manifest")

    def validate(self) -> None:
        findings = manifest_findings(self)
        if findings:
            raise ArchiveError(findings[0].message)


@dataclass
class LayerTensor:
    """One sample's activation at one layer, flattened channel-major."""

    layer_index: int
    sample_id: str
    channels: int
    width: int
    height: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        expected = self.channels * self.width * self.height
        if self.values.ndim != 1 or self.values.size != expected:
            raise ArchiveError(
                f"tensor for sample {self.sample_id!r} at layer {self.layer_index} "
                f"has {self.values.size} values, expected {expected}"
            )

    def spatial(self) -> np.ndarray:
        """View of shape (channels, width*height)."""
        return self.values.reshape(self.channels, self.width * self.height)


@dataclass(frozen=True)
class Finding:
    """One validation problem; an empty finding list means a clean archive."""

    code: str
    message: str
    layer_index: int | None = None
    sample_id: str | None = None


@dataclass(frozen=True)
class Archive:
    root: Path
    manifest: Manifest


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def manifest_findings(manifest: Manifest) -> list[Finding]:
    """Check manifest invariants; shared by strict readers and validation."""
    findings: list[Finding] = []
    if manifest.format_version != FORMAT_VERSION:
        findings.append(
            Finding(
                "unsupported-version",
                f"manifest format_version {manifest.format_version} is not supported "
                f"(current: {FORMAT_VERSION})",
            )
        )
    for position, descriptor in enumerate(manifest.layers):
        if descriptor.index != position:
            findings.append(
                Finding(
                    "bad-layer-indices",
                    "layer indices must be 0-based, strictly increasing and contiguous "
                    f"(position {position} holds index {descriptor.index})",
                    layer_index=descriptor.index,
                )
            )
            break
    for descriptor in manifest.layers:
        dims = (descriptor.channels, descriptor.width, descriptor.height)
        if any(d < 1 or d > _MAX_DIM for d in dims):
            findings.append(
                Finding(
                    "bad-dimensions",
                    f"layer {descriptor.index} has invalid dimensions {dims}",
                    layer_index=descriptor.index,
                )
            )
    seen: set[str] = set()
    for record in manifest.samples:
        if record.id in seen:
            findings.append(
                Finding(
                    "duplicate-sample-id",
                    f"sample id {record.id!r} appears more than once",
                    sample_id=record.id,
                )
            )
        seen.add(record.id)
        if record.label not in LABELS:
            findings.append(
                Finding(
                    "bad-label",
                    f"sample {record.id!r} has label {record.label!r}, expected one of {LABELS}",
                    sample_id=record.id,
                )
            )
        if record.split not in SPLITS:
            findings.append(
                Finding(
                    "bad-split",
                    f"sample {record.id!r} has split {record.split!r}, expected one of {SPLITS}",
                    sample_id=record.id,
                )
            )
    return findings


def _manifest_to_json(manifest: Manifest) -> str:
    doc = {
        "format_version": manifest.format_version,
        "model_id": manifest.model_id,
        "layers": [
            {
                "index": d.index,
                "name": d.name,
                "channels": d.channels,
                "width": d.width,
                "height": d.height,
            }
            for d in manifest.layers
        ],
        "samples": [
            {"id": s.id, "label": s.label, "split": s.split} for s in manifest.samples
        ],
        "created_utc": manifest.created_utc,
    }
    return json.dumps(doc, indent=2) + "\n"


def _require_keys(doc: dict, keys: tuple[str, ...], where: str) -> None:
    if set(doc) != set(keys):
        raise ArchiveError(
            f"{where} must have keys {sorted(keys)}, got {sorted(doc)}"
        )


def _as_int(value: object, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ArchiveError(f"{where} must be an integer, got {value!r}")
    return value


def _as_str(value: object, where: str) -> str:
    if not isinstance(value, str):
        raise ArchiveError(f"{where} must be a string, got {value!r}")
    return value


def _manifest_from_doc(doc: object) -> Manifest:
    if not isinstance(doc, dict):
        raise ArchiveError("manifest root must be a JSON object")
    _require_keys(
        doc, ("format_version", "model_id", "layers", "samples", "created_utc"), "manifest"
    )
    version = _as_int(doc["format_version"], "format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"manifest format_version {version} is not supported (current: {FORMAT_VERSION})"
        )
    model_id = _as_str(doc["model_id"], "model_id")
    created = _as_str(doc["created_utc"], "created_utc")
    if not isinstance(doc["layers"], list) or not isinstance(doc["samples"], list):
        raise ArchiveError("manifest layers and samples must be arrays")
    layers = []
    for entry in doc["layers"]:
        if not isinstance(entry, dict):
            raise ArchiveError("each layer entry must be an object")
        _require_keys(entry, ("index", "name", "channels", "width", "height"), "layer entry")
        layers.append(
            LayerDescriptor(
                index=_as_int(entry["index"], "layer index"),
                name=_as_str(entry["name"], "layer name"),
                channels=_as_int(entry["channels"], "channels"),
                width=_as_int(entry["width"], "width"),
                height=_as_int(entry["height"], "height"),
            )
        )
    samples = []
    for entry in doc["samples"]:
        if not isinstance(entry, dict):
            raise ArchiveError("each sample entry must be an object")
        _require_keys(entry, ("id", "label", "split"), "sample entry")
        samples.append(
            SampleRecord(
                id=_as_str(entry["id"], "sample id"),
                label=_as_str(entry["label"], "sample label"),
                split=_as_str(entry["split"], "sample split"),
            )
        )
    return Manifest(version, model_id, layers, samples, created)


def layer_blob_name(layer_index: int) -> str:
    return f"layer_{layer_index}.bin"


def write_archive(
    manifest: Manifest, tensors: Iterable[LayerTensor], destination: str | Path
) -> Archive:
    """Write a complete archive; tensors may arrive in any order.

    Every declared (layer, sample) pair must be covered exactly once.  The
    on-disk blob order is canonical (manifest order), so the same logical
    content always produces byte-identical layer files.
    """
    findings = manifest_findings(manifest)
    if findings:
        raise ArchiveError(findings[0].message)
    layer_by_index = {d.index: d for d in manifest.layers}
    sample_pos = {s.id: i for i, s in enumerate(manifest.samples)}
    store: dict[int, list[np.ndarray | None]] = {
        d.index: [None] * len(manifest.samples) for d in manifest.layers
    }
    for tensor in tensors:
        descriptor = layer_by_index.get(tensor.layer_index)
        if descriptor is None:
            raise ArchiveError(f"tensor references undeclared layer {tensor.layer_index}")
        if tensor.sample_id not in sample_pos:
            raise ArchiveError(f"tensor references undeclared sample {tensor.sample_id!r}")
        shape = (tensor.channels, tensor.width, tensor.height)
        declared = (descriptor.channels, descriptor.width, descriptor.height)
        if shape != declared:
            raise ArchiveError(
                f"dimension mismatch for sample {tensor.sample_id!r} at layer "
                f"{tensor.layer_index}: tensor is {shape}, layer declares {declared}"
            )
        slot = sample_pos[tensor.sample_id]
        if store[tensor.layer_index][slot] is not None:
            raise ArchiveError(
                f"duplicate tensor for sample {tensor.sample_id!r} at layer {tensor.layer_index}"
            )
        store[tensor.layer_index][slot] = np.ascontiguousarray(tensor.values, dtype="<f4")
    for index, slots in store.items():
        for slot, values in enumerate(slots):
            if values is None:
                raise ArchiveError(
                    f"missing tensor for sample {manifest.samples[slot].id!r} at layer {index}"
                )
    root = Path(destination)
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_NAME).write_text(_manifest_to_json(manifest), encoding="utf-8")
    for descriptor in manifest.layers:
        with open(root / layer_blob_name(descriptor.index), "wb") as fh:
            fh.write(
                _HEADER.pack(
                    LAYER_MAGIC,
                    FORMAT_VERSION,
                    descriptor.index,
                    len(manifest.samples),
                    descriptor.channels,
                    descriptor.width,
                    descriptor.height,
                )
            )
            for values in store[descriptor.index]:
                fh.write(values.tobytes())
    return Archive(root, manifest)


def _check_blob(path: Path, descriptor: LayerDescriptor, num_samples: int) -> None:
    if not path.exists():
        raise ArchiveError(f"missing layer file {path.name}")
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise TruncatedBlobError(f"{path.name} is shorter than the blob header")
    magic, version, layer_index, n_samples, channels, width, height = _HEADER.unpack(header)
    if magic != LAYER_MAGIC:
        raise BadMagicError(f"{path.name} starts with {magic!r}, expected {LAYER_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path.name} declares version {version}, expected {FORMAT_VERSION}"
        )
    declared = (descriptor.index, num_samples, descriptor.channels, descriptor.width, descriptor.height)
    found = (layer_index, n_samples, channels, width, height)
    if found != declared:
        raise ArchiveError(
            f"{path.name} header {found} does not match manifest {declared}"
        )
    expected_size = _HEADER.size + 4 * num_samples * descriptor.elements
    actual = path.stat().st_size
    if actual < expected_size:
        raise TruncatedBlobError(
            f"{path.name} holds {actual} bytes, header promises {expected_size}"
        )
    if actual > expected_size:
        raise ArchiveError(f"{path.name} has trailing bytes beyond the declared payload")


def read_manifest(path: str | Path) -> Manifest:
    """Read and fully validate the manifest of an archive directory."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME if root.is_dir() else root
    root = manifest_path.parent
    try:
        raw = manifest_path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ArchiveError(f"{root} is not an archive: no {MANIFEST_NAME}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"malformed manifest: {exc}") from None
    manifest = _manifest_from_doc(doc)
    findings = manifest_findings(manifest)
    if findings:
        first = findings[0]
        if first.code == "unsupported-version":
            raise UnsupportedVersionError(first.message)
        raise ArchiveError(first.message)
    for descriptor in manifest.layers:
        _check_blob(root / layer_blob_name(descriptor.index), descriptor, len(manifest.samples))
    return manifest


def open_archive(path: str | Path) -> Archive:
    root = Path(path)
    if not root.is_dir():
        raise ArchiveError(f"{root} is not an archive directory")
    return Archive(root, read_manifest(root))


def read_layer_tensors(
    archive: Archive,
    layer_index: int,
    sample_filter: Callable[[SampleRecord], bool] | None = None,
) -> list[LayerTensor]:
    """Tensors of one layer in manifest sample order, optionally filtered."""
    manifest = archive.manifest
    descriptor = manifest.layer(layer_index)
    path = archive.root / layer_blob_name(descriptor.index)
    _check_blob(path, descriptor, len(manifest.samples))
    payload = path.read_bytes()
    flat = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size)
    elements = descriptor.elements
    out: list[LayerTensor] = []
    for position, record in enumerate(manifest.samples):
        if sample_filter is not None and not sample_filter(record):
            continue
        values = np.array(flat[position * elements : (position + 1) * elements])
        out.append(
            LayerTensor(
                descriptor.index,
                record.id,
                descriptor.channels,
                descriptor.width,
                descriptor.height,
                values,
            )
        )
    return out


def validate_archive(target: Archive | str | Path) -> list[Finding]:
    """Collect every invariant violation; an empty report means a clean archive.

    Unlike the strict readers this never raises on bad content: problems
    come back as findings so callers can report all of them at once.
    """
    root = target.root if isinstance(target, Archive) else Path(target)
    manifest_path = root / MANIFEST_NAME
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        return [Finding("malformed-manifest", f"no {MANIFEST_NAME} in {root}")]
    except json.JSONDecodeError as exc:
        return [Finding("malformed-manifest", f"manifest is not valid JSON: {exc}")]
    try:
        manifest = _manifest_from_doc(doc)
    except UnsupportedVersionError as exc:
        return [Finding("unsupported-version", str(exc))]
    except ArchiveError as exc:
        return [Finding("malformed-manifest", str(exc))]
    findings = manifest_findings(manifest)
    for descriptor in manifest.layers:
        path = root / layer_blob_name(descriptor.index)
        try:
            _check_blob(path, descriptor, len(manifest.samples))
        except BadMagicError as exc:
            findings.append(Finding("bad-magic", str(exc), layer_index=descriptor.index))
            continue
        except UnsupportedVersionError as exc:
            findings.append(
                Finding("unsupported-version", str(exc), layer_index=descriptor.index)
            )
            continue
        except TruncatedBlobError as exc:
            findings.append(
                Finding("truncated-blob", str(exc), layer_index=descriptor.index)
            )
            continue
        except ArchiveError as exc:
            code = "missing-layer-file" if not path.exists() else "header-mismatch"
            findings.append(Finding(code, str(exc), layer_index=descriptor.index))
            continue
        flat = np.frombuffer(path.read_bytes(), dtype="<f4", offset=_HEADER.size)
        if len(manifest.samples) == 0:
            continue
        per_sample = np.isfinite(flat).reshape(len(manifest.samples), descriptor.elements)
        for position in np.flatnonzero(~per_sample.all(axis=1)):
            record = manifest.samples[int(position)]
            findings.append(
                Finding(
                    "non-finite-value",
                    f"sample {record.id!r} at layer {descriptor.index} contains "
                    "non-finite values",
                    layer_index=descriptor.index,
                    sample_id=record.id,
                )
            )
    return findings
