import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divact.dct import cutoff_for, dct, idct, low_pass_mask, split_frequency
from divact.errors import ParameterError, ShapeError
from divact.tensor import Rng


def brute_dct2(h):
    """Orthonormally scaled type-II double sum, evaluated term by term."""
    n = h.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            si = np.sqrt(1 / n) if i == 0 else np.sqrt(2 / n)
            sj = np.sqrt(1 / n) if j == 0 else np.sqrt(2 / n)
            acc = 0.0
            for x in range(n):
                for y in range(n):
                    acc += h[x, y] * np.cos(np.pi * (x + 0.5) * i / n) * np.cos(np.pi * (y + 0.5) * j / n)
            out[i, j] = si * sj * acc
    return out


def test_constant_has_single_dc_coefficient():
    spec = dct(np.ones((4, 4)))
    expected = np.zeros((4, 4))
    expected[0, 0] = 4.0
    np.testing.assert_allclose(spec, expected, atol=1e-12)


def test_zero_maps_to_zero():
    assert np.all(dct(np.zeros((5, 5))) == 0)
    assert np.all(idct(np.zeros((5, 5))) == 0)


def test_brute_force_oracle_8x8():
    h = Rng(8).normal((8, 8))
    assert np.abs(dct(h) - brute_dct2(h)).max() < 1e-4


def test_unit_impulse_inverse():
    spec = np.zeros((4, 4))
    spec[0, 0] = 1.0
    np.testing.assert_allclose(idct(spec), np.full((4, 4), 0.25), atol=1e-12)


def test_roundtrip_and_parseval_32():
    h = Rng(1).normal((32, 32))
    spec = dct(h)
    assert np.abs(idct(spec) - h).max() < 1e-4
    assert abs(np.linalg.norm(spec) - np.linalg.norm(h)) / np.linalg.norm(h) < 1e-4


@pytest.mark.parametrize("ndim", [1, 2, 3])
def test_leading_axes_independent(ndim):
    shape = (2, 3) + (6,) * ndim
    h = Rng(ndim).normal(shape)
    full = dct(h, ndim)
    np.testing.assert_allclose(full[1, 2], dct(h[1, 2], ndim), atol=1e-12)
    np.testing.assert_allclose(idct(full, ndim), h, atol=1e-10)


def test_shape_errors():
    with pytest.raises(ShapeError):
        dct(np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        dct(np.zeros(4), ndim=2)


def test_mask_examples():
    m = low_pass_mask(2, 4, 2).array
    expected = np.zeros((4, 4))
    expected[:2, :2] = 1
    assert np.array_equal(m, expected)
    assert np.all(low_pass_mask(2, 6, 6).array == 1)
    assert np.array_equal(low_pass_mask(1, 5, 1).array, [1, 0, 0, 0, 0])
    with pytest.raises(ParameterError):
        low_pass_mask(2, 4, 0)
    with pytest.raises(ParameterError):
        low_pass_mask(2, 4, 5)


def test_mask_idempotent():
    m = low_pass_mask(2, 8, 3).array
    assert np.array_equal(m * m, m)


def test_cutoff_for():
    assert cutoff_for(16, 0.1) == 1
    assert cutoff_for(32, 0.25) == 8
    assert cutoff_for(3, 0.01) == 1


def test_split_examples():
    c = np.full((6, 6), 2.5)
    lo, hi = split_frequency(c, low_pass_mask(2, 6, 1))
    np.testing.assert_allclose(lo, c, atol=1e-12)
    np.testing.assert_allclose(hi, 0, atol=1e-12)

    alt = np.array([1.0, -1] * 4)
    lo, hi = split_frequency(alt, low_pass_mask(1, 8, 4))
    # brute-force 1-D sum: sum_k<4 (s_k sum_m (-1)^m cos(pi (m + 1/2) k / 8))^2
    ref = 0.0
    for k in range(4):
        s_k = np.sqrt(1 / 8) if k == 0 else np.sqrt(2 / 8)
        ref += (s_k * sum((-1) ** m * np.cos(np.pi * (m + 0.5) * k / 8) for m in range(8))) ** 2
    assert np.linalg.norm(lo) == pytest.approx(np.sqrt(ref), abs=1e-9)
    assert np.linalg.norm(lo) == pytest.approx(0.788357282909891, abs=1e-9)
    # most of the energy is high-frequency
    assert np.linalg.norm(hi) ** 2 > 0.9 * np.linalg.norm(alt) ** 2
    np.testing.assert_allclose(lo + hi, alt, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 16))
def test_linearity_and_complementarity(seed, a, b, w):
    rng = Rng(seed)
    x, y = rng.normal((16, 16)), rng.normal((16, 16))
    assert np.abs(dct(a * x + b * y) - (a * dct(x) + b * dct(y))).max() < 1e-4
    lo, hi = split_frequency(x, low_pass_mask(2, 16, w))
    assert np.abs(lo + hi - x).max() < 1e-4
