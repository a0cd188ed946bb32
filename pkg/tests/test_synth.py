import numpy as np
import pytest

from multiscale_ood import (
    SplitMix64,
    SynthConfig,
    generate_archive,
    prng_next,
    read_layer_tensors,
    validate_archive,
)

BASE = dict(
    seed=7,
    num_layers=4,
    channels=(4, 6, 8, 8),
    spatial=((4, 4), (3, 3), (2, 2), (2, 2)),
    latent_dim=8,
    shift_layer=1,
    shift_magnitude=4.0,
)


def test_prng_reference_vector():
    value, state = prng_next(0)
    assert value == 0xE220A8397B1DCDAF
    assert state == 0x9E3779B97F4A7C15


def test_prng_purity():
    assert prng_next(12345) == prng_next(12345)


def test_prng_equal_states_equal_sequences():
    a, b = SplitMix64(99), SplitMix64(99)
    assert [a.next_u64() for _ in range(64)] == [b.next_u64() for _ in range(64)]


def test_normals_deterministic_and_standardish():
    values = SplitMix64(5).normals(4000)
    assert np.array_equal(values, SplitMix64(5).normals(4000))
    assert abs(values.mean()) < 0.1
    assert abs(values.std() - 1.0) < 0.1


def blob_bytes(archive, layer):
    return (archive.root / f"layer_{layer}.bin").read_bytes()


def test_same_config_byte_identical(tmp_path):
    config = SynthConfig(**BASE, n_samples=6)
    a = generate_archive(config, tmp_path / "a")
    b = generate_archive(config, tmp_path / "b")
    for layer in range(config.num_layers):
        assert blob_bytes(a, layer) == blob_bytes(b, layer)
    assert (a.root / "manifest.json").read_bytes() == (b.root / "manifest.json").read_bytes()


def test_zero_shift_ood_blobs_match_id(tmp_path):
    id_archive = generate_archive(
        SynthConfig(**{**BASE, "shift_magnitude": 0.0}, n_samples=6, mode="id"),
        tmp_path / "id",
    )
    ood_archive = generate_archive(
        SynthConfig(**{**BASE, "shift_magnitude": 0.0}, n_samples=6, mode="ood"),
        tmp_path / "ood",
    )
    for layer in range(4):
        assert blob_bytes(id_archive, layer) == blob_bytes(ood_archive, layer)


def test_layers_below_shift_identical_across_modes(tmp_path):
    id_archive = generate_archive(SynthConfig(**BASE, n_samples=8, mode="id"), tmp_path / "id")
    ood_archive = generate_archive(SynthConfig(**BASE, n_samples=8, mode="ood"), tmp_path / "ood")
    assert blob_bytes(id_archive, 0) == blob_bytes(ood_archive, 0)
    for layer in (1, 2, 3):
        assert blob_bytes(id_archive, layer) != blob_bytes(ood_archive, layer)


def test_generated_archives_validate_clean(tmp_path):
    for mode in ("id", "ood"):
        archive = generate_archive(SynthConfig(**BASE, n_samples=5, mode=mode), tmp_path / mode)
        assert validate_archive(archive) == []


def test_activations_are_nonnegative_and_straddle_one(tmp_path):
    archive = generate_archive(SynthConfig(**BASE, n_samples=16, mode="ood"), tmp_path / "a")
    values = np.concatenate([t.values for t in read_layer_tensors(archive, 2)])
    assert (values >= 0.0).all()
    # shift >= 1 guarantees clipping at c=1 hits some but not all entries
    assert (values > 1.0).any()
    assert ((values > 0.0) & (values < 1.0)).any()


def test_labels_and_splits(tmp_path):
    archive = generate_archive(
        SynthConfig(**BASE, n_samples=3, mode="id", split="validation", first_sample_index=64),
        tmp_path / "a",
    )
    records = archive.manifest.samples
    assert [r.id for r in records] == ["s000064", "s000065", "s000066"]
    assert all(r.label == "id" and r.split == "validation" for r in records)
    ood = generate_archive(SynthConfig(**BASE, n_samples=2, mode="ood"), tmp_path / "b")
    assert all(r.label == "ood" and r.split == "tune" for r in ood.manifest.samples)


def test_disjoint_sample_windows_differ(tmp_path):
    a = generate_archive(SynthConfig(**BASE, n_samples=4, first_sample_index=0), tmp_path / "a")
    b = generate_archive(SynthConfig(**BASE, n_samples=4, first_sample_index=4), tmp_path / "b")
    assert blob_bytes(a, 0) != blob_bytes(b, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(num_layers=1, channels=(1,), spatial=((1, 1),)).validate()
    with pytest.raises(ValueError):
        SynthConfig(channels=(1, 1)).validate()
    with pytest.raises(ValueError):
        SynthConfig(mode="weird").validate()
    with pytest.raises(ValueError):
        SynthConfig(shift_layer=4).validate()
    with pytest.raises(ValueError):
        SynthConfig(split="holdout").validate()
