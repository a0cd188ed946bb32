import numpy as np
import pytest

from multiscale_ood import (
    GramStats,
    LayerTensor,
    deviation,
    fit_gram_stats,
    gram_row_sums,
    total_deviation,
)

from oracles import naive_gram_row_sums


def tensor_of(values, channels, width, height, sample="s", layer=0):
    return LayerTensor(layer, sample, channels, width, height, np.asarray(values, dtype=np.float64))


def test_row_sums_hand_case():
    # r = [[1], [2]] -> G = [[1, 2], [2, 4]] -> row sums [3, 6]
    out = gram_row_sums(tensor_of([1.0, 2.0], 2, 1, 1))
    assert np.array_equal(out, [3.0, 6.0])


def test_row_sums_zero_tensor():
    out = gram_row_sums(tensor_of(np.zeros(8), 2, 2, 2))
    assert np.array_equal(out, np.zeros(2))


def test_row_sums_single_channel_is_squared_norm():
    out = gram_row_sums(tensor_of([1.0, 2.0, 3.0], 1, 3, 1))
    assert np.array_equal(out, [14.0])


def test_row_sums_rejects_bad_order():
    with pytest.raises(ValueError):
        gram_row_sums(tensor_of([1.0], 1, 1, 1), p=0)


def test_row_sums_match_naive_oracle_exactly():
    rng = np.random.default_rng(42)
    for _ in range(30):
        channels = int(rng.integers(1, 9))
        spatial = int(rng.integers(1, 13))
        # integer-valued floats keep every product and sum exact
        matrix = rng.integers(-3, 4, size=(channels, spatial)).astype(np.float64)
        tensor = tensor_of(matrix.reshape(-1), channels, spatial, 1)
        for p in (1, 2):
            assert np.array_equal(gram_row_sums(tensor, p), naive_gram_row_sums(matrix, p))


def test_row_sums_invariant_under_shared_spatial_permutation():
    rng = np.random.default_rng(9)
    matrix = rng.integers(-5, 6, size=(4, 10)).astype(np.float64)
    perm = rng.permutation(10)
    a = gram_row_sums(tensor_of(matrix.reshape(-1), 4, 10, 1))
    b = gram_row_sums(tensor_of(matrix[:, perm].reshape(-1), 4, 10, 1))
    assert np.array_equal(a, b)


def test_fit_single_training_sample():
    sample = tensor_of([1.0, 2.0], 2, 1, 1)
    stats = fit_gram_stats([sample], [], rectify_c=100.0)
    assert np.array_equal(stats.channel_min, stats.channel_max)
    assert deviation(stats, sample, rectify_c=100.0) == 0.0


def test_fit_hand_normalization():
    # K=1, raw row sums {1, 2, 4} via w=2 value pairs
    train = [
        tensor_of([1.0, 0.0], 1, 2, 1),
        tensor_of([1.0, 1.0], 1, 2, 1),
        tensor_of([2.0, 0.0], 1, 2, 1),
    ]
    stats = fit_gram_stats(train, [], rectify_c=100.0)
    assert stats.norm_lo == 1.0
    assert stats.norm_hi == 4.0
    assert np.array_equal(stats.channel_min, [0.0])
    assert np.array_equal(stats.channel_max, [1.0])


def test_expected_deviation_floor_when_validation_inside_bounds():
    train = [
        tensor_of([1.0, 0.0], 1, 2, 1),
        tensor_of([2.0, 0.0], 1, 2, 1),
    ]
    validation = [tensor_of([1.0, 1.0], 1, 2, 1)]  # row sum 2, inside [1, 4]
    stats = fit_gram_stats(train, validation, rectify_c=100.0)
    assert stats.expected_deviation == 1e-12


def test_deviation_hand_case_above():
    stats = GramStats(0, 1, np.array([0.2]), np.array([0.5]), 0.0, 100.0, 1.0)
    # row sum 80 -> normalized 0.8 -> (0.8 - 0.5) / 0.5 = 0.6
    tensor = tensor_of([8.0, 4.0, 0.0], 1, 3, 1)
    assert deviation(stats, tensor, rectify_c=100.0) == pytest.approx(0.6, abs=1e-12)


def test_deviation_hand_case_below():
    stats = GramStats(0, 1, np.array([0.2]), np.array([0.5]), 0.0, 100.0, 1.0)
    # row sum 10 -> normalized 0.1 -> (0.2 - 0.1) / 0.2 = 0.5
    tensor = tensor_of([3.0, 1.0], 1, 2, 1)
    assert deviation(stats, tensor, rectify_c=100.0) == pytest.approx(0.5, abs=1e-12)


def test_training_samples_deviate_exactly_zero():
    rng = np.random.default_rng(3)
    train = [
        tensor_of(rng.normal(size=24), 4, 3, 2, sample=f"t{i}") for i in range(20)
    ]
    validation = [
        tensor_of(rng.normal(size=24), 4, 3, 2, sample=f"v{i}") for i in range(8)
    ]
    stats = fit_gram_stats(train, validation, rectify_c=1.0)
    for tensor in train:
        assert deviation(stats, tensor, rectify_c=1.0) == 0.0


def test_deviation_nonnegative_and_monotone_above_bound():
    stats = GramStats(0, 1, np.array([0.2]), np.array([0.5]), 0.0, 1.0, 1.0)
    values = []
    for raw in (0.55, 0.7, 0.9, 3.0):
        tensor = tensor_of([np.sqrt(raw)], 1, 1, 1)
        values.append(deviation(stats, tensor, rectify_c=100.0))
    assert all(v >= 0.0 for v in values)
    assert values == sorted(values)
    assert values[0] > 0.0


def test_zero_bound_uses_epsilon_denominator():
    stats = GramStats(0, 1, np.array([0.0]), np.array([0.0]), 0.0, 1.0, 1.0)
    tensor = tensor_of([1.0], 1, 1, 1)  # normalized 1.0, above the zero bound
    value = deviation(stats, tensor, rectify_c=100.0)
    assert value == pytest.approx(1.0 / 1e-12, rel=1e-9)


def test_channel_mismatch_rejected():
    stats = GramStats(0, 1, np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="channel"):
        deviation(stats, tensor_of([1.0], 1, 1, 1))
    with pytest.raises(ValueError, match="channel"):
        fit_gram_stats(
            [tensor_of([1.0, 1.0], 2, 1, 1), tensor_of([1.0], 1, 1, 1)], []
        )


def test_empty_training_set_rejected():
    with pytest.raises(ValueError, match="training"):
        fit_gram_stats([], [])


def test_rectification_applied_before_row_sums():
    stats = fit_gram_stats([tensor_of([5.0], 1, 1, 1)], [], rectify_c=1.0)
    # clipped at 1.0: the single training row sum is 1.0, not 25.0
    assert stats.norm_lo == 1.0


def test_total_deviation_sums_layers():
    stats0 = GramStats(0, 1, np.array([0.2]), np.array([0.5]), 0.0, 100.0, 1.0)
    stats1 = GramStats(1, 1, np.array([0.2]), np.array([0.5]), 0.0, 100.0, 1.0)
    tensors = {
        0: tensor_of([8.0, 4.0, 0.0], 1, 3, 1, layer=0),  # deviation 0.6
        1: tensor_of([3.0, 1.0], 1, 2, 1, layer=1),  # deviation 0.5
    }
    out = total_deviation({0: stats0, 1: stats1}, tensors, rectify_c=100.0)
    assert out == pytest.approx(1.1, abs=1e-12)
