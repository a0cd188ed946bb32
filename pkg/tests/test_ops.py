import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiscale_ood import LayerTensor, rectify, reduce_spatial


def tensor_of(values, channels, width, height):
    return LayerTensor(0, "s", channels, width, height, np.asarray(values, dtype=np.float64))


@st.composite
def random_tensors(draw):
    channels = draw(st.integers(1, 4))
    width = draw(st.integers(1, 4))
    height = draw(st.integers(1, 4))
    n = channels * width * height
    values = draw(
        st.lists(
            st.floats(-50, 50, allow_nan=False, allow_infinity=False),
            min_size=n,
            max_size=n,
        )
    )
    return tensor_of(values, channels, width, height)


def test_rectify_clips_from_above_only():
    out = rectify(tensor_of([1.3, 0.5, -0.2], 3, 1, 1), 1.0)
    assert np.array_equal(out.values, [1.0, 0.5, -0.2])


def test_rectify_identity_when_below_threshold():
    tensor = tensor_of([0.1, -3.0, 0.9, 0.4], 1, 2, 2)
    out = rectify(tensor, 1.0)
    assert np.array_equal(out.values, tensor.values)


def test_rectify_rejects_non_finite_threshold():
    with pytest.raises(ValueError):
        rectify(tensor_of([0.0], 1, 1, 1), math.inf)


def test_rectify_preserves_float32():
    tensor = LayerTensor(0, "s", 1, 2, 1, np.array([0.25, 2.0], dtype=np.float32))
    out = rectify(tensor, 1.0)
    assert out.values.dtype == np.float32
    assert np.array_equal(out.values, np.array([0.25, 1.0], dtype=np.float32))


@settings(deadline=None)
@given(random_tensors(), st.floats(-10, 10, allow_nan=False, allow_infinity=False))
def test_rectify_idempotent_and_never_increases(tensor, c):
    once = rectify(tensor, c)
    twice = rectify(once, c)
    assert np.array_equal(once.values, twice.values)
    assert (once.values <= tensor.values).all()
    assert (once.values <= c).all()


def test_reduce_spatial_hand_case():
    # channel 0: [[1,-1],[2,0]], channel 1: zeros -> [1.0, 0.0]
    tensor = tensor_of([1.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2, 2, 2)
    out = reduce_spatial(tensor)
    assert np.array_equal(out.values, [1.0, 0.0])


def test_reduce_spatial_zero_tensor():
    out = reduce_spatial(tensor_of(np.zeros(12), 3, 2, 2))
    assert np.array_equal(out.values, np.zeros(3))


def test_reduce_spatial_degenerate_spatial_size_is_abs():
    out = reduce_spatial(tensor_of([-2.5, 4.0], 2, 1, 1))
    assert np.array_equal(out.values, [2.5, 4.0])


@settings(deadline=None)
@given(random_tensors())
def test_reduce_spatial_permutation_invariance(tensor):
    rng = np.random.default_rng(0)
    spatial = tensor.spatial().copy()
    for k in range(tensor.channels):
        spatial[k] = spatial[k][rng.permutation(spatial.shape[1])]
    permuted = LayerTensor(
        0, "s", tensor.channels, tensor.width, tensor.height, spatial.reshape(-1)
    )
    a = reduce_spatial(tensor).values
    b = reduce_spatial(permuted).values
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@settings(deadline=None)
@given(random_tensors(), st.floats(-4, 4, allow_nan=False, allow_infinity=False))
def test_reduce_spatial_absolute_homogeneity(tensor, alpha):
    scaled = LayerTensor(
        0, "s", tensor.channels, tensor.width, tensor.height, alpha * tensor.values
    )
    a = reduce_spatial(scaled).values
    b = abs(alpha) * reduce_spatial(tensor).values
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
