"""Magnitude spectra of feature sequences along the temporal axis."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, make_op
from .exceptions import ContractError, DimensionError

DEGENERATE_NORM = 1e-12


@dataclass
class Spectrum:
    """Unnormalized rFFT magnitudes, shape ``(B, T // 2 + 1, D)``."""

    mags: Tensor
    source_len: int

    @property
    def n_bins(self):
        return self.mags.shape[1]


def _dft_basis(T):
    k = np.arange(T // 2 + 1)[:, None]
    t = np.arange(T)[None, :]
    angle = 2.0 * np.pi * ((k * t) % T) / T
    return np.cos(angle), np.sin(angle)


def rfft_magnitude(f):
    """``|sum_t f[b, t, d] exp(-2 pi i k t / T)|`` for ``k = 0 .. T // 2``.

    Forward values come from :func:`numpy.fft.rfft`, which handles any
    length.  The gradient is the real part of the phase-weighted inverse
    projection; bins with zero magnitude get zero subgradient.
    """
    if not isinstance(f, Tensor):
        f = Tensor(f)
    if f.ndim != 3:
        raise DimensionError(f"rfft_magnitude expects a (B, T, D) tensor, got shape {f.shape}")
    T = f.shape[1]
    if T < 2:
        raise ContractError(f"rfft_magnitude needs T >= 2, got T={T}")
    if not np.all(np.isfinite(f.data)):
        raise ContractError("rfft_magnitude: input contains non-finite values")

    X = np.fft.rfft(f.data, axis=1)
    mags = np.abs(X)

    def bw(g):
        cos_b, sin_b = _dft_basis(T)
        nz = mags > 0
        safe = np.where(nz, mags, 1.0)
        # d|X_k|/df_t = (Re X_k cos(wkt) - Im X_k sin(wkt)) / |X_k|
        wr = np.where(nz, g * X.real / safe, 0.0)
        wi = np.where(nz, g * X.imag / safe, 0.0)
        grad = np.einsum("kt,bkd->btd", cos_b, wr) - np.einsum("kt,bkd->btd", sin_b, wi)
        return (grad,)

    return Spectrum(make_op(mags, (f,), bw, "rfft_mag"), T)


def normalize_flatten(spectrum, b):
    """Row-major flattened, unit-norm spectrum of batch item ``b``.

    Returns ``(vector, degenerate)``; a spectrum whose norm is below
    ``1e-12`` yields the zero vector and ``degenerate=True``.
    """
    mags = spectrum.mags.data if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    flat = np.asarray(mags[b], dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(flat)
    if norm < DEGENERATE_NORM:
        return np.zeros_like(flat), True
    return flat / norm, False
