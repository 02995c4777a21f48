import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fftrust.autodiff import Tensor
from fftrust.exceptions import ContractError
from fftrust.spectral import normalize_flatten, rfft_magnitude

from conftest import grad_rel_err


def naive_rfft_mag(f):
    """O(T^2) DFT along axis 1, bins 0..T//2."""
    B, T, D = f.shape
    out = np.zeros((B, T // 2 + 1, D))
    for k in range(T // 2 + 1):
        acc = np.zeros((B, D), dtype=complex)
        for t in range(T):
            acc += f[:, t, :] * np.exp(-2j * np.pi * k * t / T)
        out[:, k, :] = np.abs(acc)
    return out


@pytest.mark.parametrize("T", [2, 3, 8, 16, 20])
def test_matches_naive_dft(T, rng):
    f = rng.normal(size=(3, T, 4))
    assert np.max(np.abs(rfft_magnitude(Tensor(f)).mags.data - naive_rfft_mag(f))) < 1e-9


@pytest.mark.parametrize("T", [2, 3, 8, 16, 20])
def test_parseval(T, rng):
    f = rng.normal(size=(1, T, 1))
    mags = naive_rfft_mag(f)[0, :, 0]
    weights = np.full(mags.size, 2.0)
    weights[0] = 1.0
    if T % 2 == 0:
        weights[-1] = 1.0
    got = rfft_magnitude(Tensor(f)).mags.data[0, :, 0]
    assert np.allclose(got, mags, atol=1e-9)
    assert abs((weights * got ** 2).sum() - T * (f ** 2).sum()) < 1e-9


def test_dc_only_signal():
    T, c = 8, -1.5
    mags = rfft_magnitude(Tensor(np.full((1, T, 1), c))).mags.data[0, :, 0]
    assert abs(mags[0] - T * abs(c)) < 1e-12
    assert np.all(np.abs(mags[1:]) < 1e-12)


def test_pure_tone():
    T, k0 = 16, 3
    t = np.arange(T)
    f = np.cos(2 * np.pi * k0 * t / T).reshape(1, T, 1)
    mags = rfft_magnitude(Tensor(f)).mags.data[0, :, 0]
    assert abs(mags[k0] - T / 2) < 1e-9
    assert np.all(np.abs(np.delete(mags, k0)) < 1e-9)


def test_bin_count_and_source_len():
    s = rfft_magnitude(Tensor(np.ones((2, 7, 3))))
    assert s.mags.shape == (2, 4, 3) and s.source_len == 7 and s.n_bins == 4


def test_short_or_nonfinite_input_rejected():
    with pytest.raises(ContractError):
        rfft_magnitude(Tensor(np.ones((1, 1, 3))))
    bad = np.ones((1, 4, 2))
    bad[0, 1, 1] = np.nan
    with pytest.raises(ContractError):
        rfft_magnitude(Tensor(bad))


@pytest.mark.parametrize("T", [3, 8, 20])
def test_gradient_vs_finite_differences(T, rng):
    f = Tensor(rng.normal(size=(2, T, 3)), requires_grad=True)
    w = rng.uniform(0.5, 1.5, (2, T // 2 + 1, 3))
    assert grad_rel_err(lambda: (rfft_magnitude(f).mags * w).sum(), [f]) < 1e-6


def test_normalize_three_four_five():
    vec, degenerate = normalize_flatten(np.array([[[3.0], [4.0]]]), 0)
    assert np.allclose(vec, [0.6, 0.8], atol=1e-15) and not degenerate


def test_normalize_degenerate_spectrum():
    vec, degenerate = normalize_flatten(np.zeros((1, 3, 2)), 0)
    assert degenerate and np.array_equal(vec, np.zeros(6))


def test_normalize_flattens_row_major():
    mags = np.arange(1.0, 7.0).reshape(1, 3, 2)
    vec, _ = normalize_flatten(rfft_magnitude(Tensor(np.ones((1, 4, 2)))), 0)
    assert vec.shape == (6,)
    vec, _ = normalize_flatten(mags, 0)
    assert np.allclose(vec * np.linalg.norm(mags), mags.reshape(-1))


cols = arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 3)),
              elements=st.floats(-3, 3, allow_nan=False, allow_infinity=False))


@settings(max_examples=50, deadline=None)
@given(cols, st.integers(0, 11))
def test_cyclic_shift_invariance(col, shift):
    f = col[None]
    a = rfft_magnitude(Tensor(f)).mags.data
    b = rfft_magnitude(Tensor(np.roll(f, shift, axis=1))).mags.data
    assert np.allclose(a, b, atol=1e-9, rtol=0)


@settings(max_examples=50, deadline=None)
@given(cols, st.floats(0.01, 10))
def test_positive_scaling(col, alpha):
    f = col[None]
    a = rfft_magnitude(Tensor(alpha * f)).mags.data
    b = alpha * rfft_magnitude(Tensor(f)).mags.data
    assert np.allclose(a, b, atol=1e-9, rtol=1e-12)
    assert np.all(a >= 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (1, 3, 2), elements=st.floats(0, 5, allow_nan=False)))
def test_normalized_vector_has_unit_norm(mags):
    vec, degenerate = normalize_flatten(mags, 0)
    if degenerate:
        assert np.linalg.norm(mags) < 1e-12
    else:
        assert abs(np.linalg.norm(vec) - 1) < 1e-12
