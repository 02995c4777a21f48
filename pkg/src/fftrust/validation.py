"""Input validation helpers for the estimator API."""

import numpy as np

from .exceptions import DataError, DimensionError


def check_sequences(X, dims=None):
    """Return ``X`` as a finite float64 array of shape ``(n, T, channels, epoch_len)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise DimensionError(f"expected X of shape (n_sequences, T, channels, epoch_len), got {X.shape}")
    if X.shape[0] == 0:
        raise DataError("X contains no sequences")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains NaN or infinite values")
    if dims is not None:
        expected = (dims.T, dims.channels, dims.epoch_len)
        if X.shape[1:] != expected:
            raise DimensionError(f"X has per-sequence shape {X.shape[1:]}, model expects {expected}")
    return X


def check_sequence_labels(y, n_sequences, T, n_classes):
    y = np.asarray(y)
    if y.shape != (n_sequences, T):
        raise DimensionError(f"expected labels of shape ({n_sequences}, {T}), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integers")
    y = y.astype(np.int64)
    bad = np.argwhere((y < 0) | (y >= n_classes))
    if bad.size:
        pos = tuple(int(i) for i in bad[0])
        raise DataError(f"label {int(y[pos])} at position {pos} outside [0, {n_classes})")
    return y


def check_domains(domains, n_sequences):
    if domains is None:
        return np.zeros(n_sequences, dtype=object)
    domains = np.asarray(domains, dtype=object)
    if domains.shape != (n_sequences,):
        raise DimensionError(f"expected {n_sequences} domain ids, got shape {domains.shape}")
    return domains


def check_sample_ids(sample_ids, n_sequences):
    if sample_ids is None:
        return np.arange(n_sequences, dtype=np.int64)
    ids = np.asarray(sample_ids, dtype=np.int64)
    if ids.shape != (n_sequences,):
        raise DimensionError(f"expected {n_sequences} sample ids, got shape {ids.shape}")
    if np.unique(ids).size != ids.size:
        raise DataError("sample ids must be unique")
    return ids
