import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xray_ddpm.core import ShapeError, batch_mse, gaussian_like, make_rng, split_rng


def test_gaussian_moments():
    x = gaussian_like((250_000, 1, 2, 2), make_rng(7)).astype(np.float64).ravel()
    assert x.size >= 10**6
    mean = x.mean()
    var = x.var()
    skew = np.mean((x - mean) ** 3) / var**1.5
    assert abs(mean) < 0.01
    assert abs(var - 1) < 0.01
    assert abs(skew) < 0.02


def test_gaussian_dtype_and_shape():
    x = gaussian_like((1, 1, 2, 2), make_rng(0))
    assert x.dtype == np.float32 and x.shape == (1, 1, 2, 2)


def test_gaussian_same_seed_bitwise():
    a = gaussian_like((3, 1, 5, 5), make_rng(99))
    b = gaussian_like((3, 1, 5, 5), make_rng(99))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("shape", [(0, 1, 2, 2), (1, 0, 2, 2), (1, 1, 2), (1, 1, 2, -1)])
def test_gaussian_invalid_shape(shape):
    with pytest.raises(ShapeError):
        gaussian_like(shape, make_rng(0))


def test_split_streams_differ_and_reproduce():
    a1, b1 = split_rng(make_rng(5), 2)
    a2, b2 = split_rng(make_rng(5), 2)
    assert a1.random() == a2.random()
    assert b1.random() == b2.random()
    assert a1.random() != b1.random()


def test_seed_range():
    make_rng(2**64 - 1)
    with pytest.raises(ValueError):
        make_rng(2**64)


def test_batch_mse_hand_values():
    z = np.zeros((2, 1, 3, 3))
    assert batch_mse(z, z) == 0.0
    assert batch_mse(z, z + 2) == 4.0
    assert batch_mse(np.array([0.0, 1.0]), np.array([1.0, 3.0])) == 2.5


def test_batch_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        batch_mse(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


finite = st.floats(-1e3, 1e3, allow_nan=False, width=32)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, (2, 1, 3, 3), elements=finite), arrays(np.float32, (2, 1, 3, 3), elements=finite))
def test_batch_mse_symmetric_nonnegative(a, b):
    assert batch_mse(a, b) == batch_mse(b, a)
    assert batch_mse(a, b) >= 0
    assert batch_mse(a, a) == 0.0
