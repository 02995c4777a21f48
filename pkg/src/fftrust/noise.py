"""Synthetic label corruption: symmetric and clinically structured noise.

Randomness comes from numpy's counter-based Philox generator
(``numpy.random.Generator(numpy.random.Philox(seed))``), so a given seed
reproduces the same corruption within this implementation.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DataError

STAGES = ("W", "N1", "N2", "N3", "REM")

# fraction of the flip mass placed on plausible confusions
PLAUSIBLE_SHARE = 0.9

DEFAULT_ADJACENCY = {
    "W": ["N1"],
    "N1": ["W", "N2"],
    "N2": ["N1", "N3"],
    "N3": ["N2"],
    "REM": ["N1"],
}


@dataclass
class TransitionMatrix:
    """Row-stochastic corruption kernel, ``t[i, j] = P(noisy=j | clean=i)``."""

    t: np.ndarray
    eta: float

    @property
    def n_classes(self):
        return self.t.shape[0]


@dataclass
class NoiseReport:
    per_class_flip_count: np.ndarray
    total: int
    n_labels: int

    @property
    def empirical_eta(self):
        return self.total / self.n_labels if self.n_labels else 0.0

    def to_dict(self):
        return {
            "per_class_flip_count": self.per_class_flip_count.tolist(),
            "total": self.total,
            "n_labels": self.n_labels,
            "empirical_eta": self.empirical_eta,
        }


def make_rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _check_eta(n_classes, eta):
    if n_classes < 2:
        raise ContractError(f"need at least 2 classes, got {n_classes}")
    if not 0.0 <= eta < 1.0:
        raise ContractError(f"noise rate must lie in [0, 1), got {eta}")


def symmetric_matrix(n_classes, eta):
    """Flip with probability ``eta`` to a uniformly chosen incorrect class."""
    _check_eta(n_classes, eta)
    t = np.full((n_classes, n_classes), eta / (n_classes - 1))
    np.fill_diagonal(t, 1.0 - eta)
    return TransitionMatrix(t, float(eta))


def resolve_adjacency(adjacency, n_classes, names=STAGES):
    """Turn a name- or index-keyed adjacency map into index lists."""
    names = list(names[:n_classes]) if len(names) >= n_classes else [str(i) for i in range(n_classes)]

    def to_index(v):
        if isinstance(v, str):
            if v not in names:
                raise ContractError(f"unknown class name {v!r} in adjacency")
            return names.index(v)
        return int(v)

    out = [[] for _ in range(n_classes)]
    for key, values in adjacency.items():
        i = to_index(key)
        if not 0 <= i < n_classes:
            raise ContractError(f"adjacency key {key!r} out of range for {n_classes} classes")
        out[i] = [to_index(v) for v in values]
    return out


def asymmetric_matrix(n_classes, eta, adjacency=None):
    """Class-dependent corruption concentrated on plausible confusions.

    Given a flip, ``PLAUSIBLE_SHARE`` of the mass is split uniformly over
    the class's adjacency set and the remainder uniformly over the other
    incorrect classes (all of it goes to the adjacency set when that set
    already covers every incorrect class).
    """
    _check_eta(n_classes, eta)
    if adjacency is None:
        adjacency = DEFAULT_ADJACENCY
    adj = resolve_adjacency(adjacency, n_classes) if isinstance(adjacency, dict) else [
        [int(j) for j in row] for row in adjacency
    ]
    if len(adj) != n_classes:
        raise ContractError(f"adjacency has {len(adj)} rows for {n_classes} classes")

    t = np.zeros((n_classes, n_classes))
    for i, near in enumerate(adj):
        if not near:
            raise ContractError(f"adjacency of class {i} is empty")
        if any(j == i for j in near):
            raise ContractError(f"adjacency of class {i} contains itself")
        if any(not 0 <= j < n_classes for j in near):
            raise ContractError(f"adjacency of class {i} has an out-of-range class: {near}")
        near = sorted(set(near))
        far = [j for j in range(n_classes) if j != i and j not in near]
        share = PLAUSIBLE_SHARE if far else 1.0
        t[i, near] = eta * share / len(near)
        if far:
            t[i, far] = eta * (1.0 - share) / len(far)
        t[i, i] = 1.0 - eta
    return TransitionMatrix(t, float(eta))


def inject(labels, matrix, rng_seed):
    """Resample every label independently from its row of ``matrix``.

    Returns a new label array and a :class:`NoiseReport`; the input is not
    modified.
    """
    y = np.asarray(labels)
    flat = y.reshape(-1).astype(np.int64)
    C = matrix.n_classes
    bad = np.flatnonzero((flat < 0) | (flat >= C))
    if bad.size:
        pos = int(bad[0])
        raise DataError(f"label {int(flat[pos])} at position {pos} outside [0, {C})")

    rng = make_rng(rng_seed)
    u = rng.random(flat.size)
    cdf = np.cumsum(matrix.t, axis=1)
    cdf[:, -1] = 1.0
    noisy = (u[:, None] >= cdf[flat]).sum(axis=1)
    noisy = np.minimum(noisy, C - 1).astype(y.dtype if np.issubdtype(y.dtype, np.integer) else np.int64)

    flipped = noisy != flat
    per_class = np.bincount(flat[flipped], minlength=C)
    report = NoiseReport(per_class, int(flipped.sum()), int(flat.size))
    return noisy.reshape(y.shape), report


def build_matrix(kind, n_classes, eta, adjacency=None):
    if kind == "none":
        return symmetric_matrix(n_classes, 0.0)
    if kind == "sym":
        return symmetric_matrix(n_classes, eta)
    if kind == "asym":
        return asymmetric_matrix(n_classes, eta, adjacency)
    raise ContractError(f"unknown noise type {kind!r}; expected 'none', 'sym' or 'asym'")
