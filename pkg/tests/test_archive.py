import json
import struct

import numpy as np
import pytest

from multiscale_ood import (
    ArchiveError,
    BadMagicError,
    LayerDescriptor,
    LayerTensor,
    Manifest,
    SampleRecord,
    TruncatedBlobError,
    UnsupportedVersionError,
    open_archive,
    read_layer_tensors,
    read_manifest,
    validate_archive,
    write_archive,
)

TS = "2024-01-01T00:00:00Z"


def one_layer_manifest():
    return Manifest(
        format_version=1,
        model_id="toy",
        layers=[LayerDescriptor(0, "act_0", 1, 1, 1)],
        samples=[SampleRecord("a", "id", "train")],
        created_utc=TS,
    )


def two_layer_manifest():
    return Manifest(
        format_version=1,
        model_id="toy",
        layers=[LayerDescriptor(0, "act_0", 2, 2, 1), LayerDescriptor(1, "act_1", 1, 1, 1)],
        samples=[
            SampleRecord("a", "id", "train"),
            SampleRecord("b", "id", "train"),
            SampleRecord("c", "ood", "test"),
        ],
        created_utc=TS,
    )


def tensors_for(manifest, rng=None):
    out = []
    for d in manifest.layers:
        for s in manifest.samples:
            if rng is None:
                values = np.zeros(d.elements, dtype=np.float32)
            else:
                values = rng.standard_normal(d.elements).astype(np.float32)
            out.append(LayerTensor(d.index, s.id, d.channels, d.width, d.height, values))
    return out


def test_single_zero_blob_layout(tmp_path):
    manifest = one_layer_manifest()
    archive = write_archive(
        manifest,
        [LayerTensor(0, "a", 1, 1, 1, np.array([0.0], dtype=np.float32))],
        tmp_path / "arc",
    )
    blob = (archive.root / "layer_0.bin").read_bytes()
    expected = b"FARC" + struct.pack("<IIQIII", 1, 0, 1, 1, 1, 1) + b"\x00" * 4
    assert blob == expected


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(5)
    manifest = two_layer_manifest()
    tensors = tensors_for(manifest, rng)
    archive = write_archive(manifest, tensors, tmp_path / "arc")
    again = open_archive(archive.root)
    assert again.manifest == manifest
    by_key = {(t.layer_index, t.sample_id): t for t in tensors}
    for d in manifest.layers:
        for t in read_layer_tensors(again, d.index):
            original = by_key[(t.layer_index, t.sample_id)]
            assert t.values.dtype == np.float32
            assert np.array_equal(t.values, original.values)


def test_dimension_mismatch_rejected(tmp_path):
    manifest = Manifest(
        format_version=1,
        model_id="toy",
        layers=[LayerDescriptor(0, "act_0", 1, 2, 2)],
        samples=[SampleRecord("a", "id", "train")],
        created_utc=TS,
    )
    bad = LayerTensor(0, "a", 5, 1, 1, np.zeros(5, dtype=np.float32))
    with pytest.raises(ArchiveError, match="dimension mismatch"):
        write_archive(manifest, [bad], tmp_path / "arc")


def test_unknown_layer_and_sample_rejected(tmp_path):
    manifest = one_layer_manifest()
    with pytest.raises(ArchiveError, match="undeclared layer"):
        write_archive(manifest, [LayerTensor(7, "a", 1, 1, 1, np.zeros(1))], tmp_path / "a1")
    with pytest.raises(ArchiveError, match="undeclared sample"):
        write_archive(manifest, [LayerTensor(0, "zz", 1, 1, 1, np.zeros(1))], tmp_path / "a2")


def test_missing_tensor_rejected(tmp_path):
    manifest = two_layer_manifest()
    tensors = tensors_for(manifest)[:-1]
    with pytest.raises(ArchiveError, match="missing tensor"):
        write_archive(manifest, tensors, tmp_path / "arc")


def test_order_independence_and_write_determinism(tmp_path):
    rng = np.random.default_rng(11)
    manifest = two_layer_manifest()
    tensors = tensors_for(manifest, rng)
    a = write_archive(manifest, tensors, tmp_path / "a")
    b = write_archive(manifest, list(reversed(tensors)), tmp_path / "b")
    for d in manifest.layers:
        name = f"layer_{d.index}.bin"
        assert (a.root / name).read_bytes() == (b.root / name).read_bytes()
    assert (a.root / "manifest.json").read_bytes() == (b.root / "manifest.json").read_bytes()


def test_read_manifest_bad_magic(tmp_path):
    manifest = one_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    blob_path = archive.root / "layer_0.bin"
    payload = bytearray(blob_path.read_bytes())
    payload[:4] = b"NOPE"
    blob_path.write_bytes(bytes(payload))
    with pytest.raises(BadMagicError):
        read_manifest(archive.root)


def test_read_manifest_unsupported_version(tmp_path):
    manifest = one_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    doc = json.loads((archive.root / "manifest.json").read_text())
    doc["format_version"] = 999
    (archive.root / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        read_manifest(archive.root)


def test_read_manifest_malformed_field(tmp_path):
    manifest = one_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    doc = json.loads((archive.root / "manifest.json").read_text())
    doc["extra"] = 1
    (archive.root / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ArchiveError, match="keys"):
        read_manifest(archive.root)


def test_read_layer_tensors_filter(tmp_path):
    manifest = two_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    trains = read_layer_tensors(archive, 0, lambda s: s.split == "train")
    assert [t.sample_id for t in trains] == ["a", "b"]
    nothing = read_layer_tensors(archive, 0, lambda s: s.split == "tune")
    assert nothing == []
    with pytest.raises(ArchiveError, match="not declared"):
        read_layer_tensors(archive, 9)


def test_truncated_blob(tmp_path):
    manifest = two_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    blob_path = archive.root / "layer_0.bin"
    payload = blob_path.read_bytes()
    blob_path.write_bytes(payload[:-3])
    with pytest.raises(TruncatedBlobError):
        read_layer_tensors(archive, 0)


def test_validate_clean_archive(tmp_path):
    manifest = two_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest, np.random.default_rng(3)), tmp_path / "arc")
    assert validate_archive(archive) == []


def test_validate_reports_single_nan(tmp_path):
    manifest = two_layer_manifest()
    tensors = tensors_for(manifest, np.random.default_rng(3))
    tensors[1].values[2] = np.nan  # layer 0, sample "b"
    archive = write_archive(manifest, tensors, tmp_path / "arc")
    findings = validate_archive(archive)
    assert len(findings) == 1
    finding = findings[0]
    assert finding.code == "non-finite-value"
    assert finding.sample_id == "b"
    assert finding.layer_index == 0


def test_validate_reports_duplicate_id(tmp_path):
    manifest = one_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    doc = json.loads((archive.root / "manifest.json").read_text())
    doc["samples"].append(dict(doc["samples"][0]))
    (archive.root / "manifest.json").write_text(json.dumps(doc))
    codes = {f.code for f in validate_archive(archive.root)}
    assert "duplicate-sample-id" in codes


def test_validate_reports_bad_layer_order(tmp_path):
    manifest = one_layer_manifest()
    archive = write_archive(manifest, tensors_for(manifest), tmp_path / "arc")
    doc = json.loads((archive.root / "manifest.json").read_text())
    doc["layers"][0]["index"] = 3
    (archive.root / "manifest.json").write_text(json.dumps(doc))
    codes = {f.code for f in validate_archive(archive.root)}
    assert "bad-layer-indices" in codes


def test_empty_archive_round_trip(tmp_path):
    manifest = Manifest(1, "toy", [LayerDescriptor(0, "act_0", 2, 1, 1)], [], TS)
    archive = write_archive(manifest, [], tmp_path / "arc")
    assert validate_archive(archive) == []
    assert read_layer_tensors(open_archive(archive.root), 0) == []
