"""Domain-invariance losses on encoder features.

Both losses sum over *ordered* domain pairs ``i != j``, so each unordered
pair contributes twice.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, DimensionError

DEGENERATE_STD = 1e-12


@dataclass
class DomainFeatureBatch:
    """Epoch-level feature matrices ``(n_i, D)``, one per domain."""

    features: list
    domain_ids: list = field(default_factory=list)

    def __post_init__(self):
        if not self.domain_ids:
            self.domain_ids = list(range(len(self.features)))
        if len(self.domain_ids) != len(self.features):
            raise ContractError("domain_ids and features differ in length")


@dataclass
class CorrelationMatrix:
    r: Tensor
    domain_id: object = None
    degenerate: bool = False

    @property
    def T(self):
        return self.r.shape[0]


def mean_cov(f):
    """Sample mean and unbiased ``1/(n-1)`` covariance of the rows of ``f``."""
    f = ad.constant(f)
    if f.ndim != 2:
        raise DimensionError(f"mean_cov expects an (n, D) matrix, got shape {f.shape}")
    n = f.shape[0]
    if n < 2:
        raise ContractError(f"mean_cov needs at least 2 rows, got {n}")
    mu = f.mean(axis=0)
    centered = f - mu
    cov = (centered.T @ centered) * (1.0 / (n - 1))
    return mu, cov


def _pairwise_sq_diff(stats):
    """``sum_{i != j} ||s_i - s_j||^2`` over a list of same-shape tensors."""
    total = None
    for i in range(len(stats)):
        for j in range(i + 1, len(stats)):
            d = ad.square(stats[i] - stats[j]).sum()
            total = d if total is None else total + d
    return total * 2.0


def epoch_align_loss(batch):
    feats = batch.features if isinstance(batch, DomainFeatureBatch) else list(batch)
    if len(feats) < 2:
        raise ContractError(f"epoch alignment needs at least 2 domains, got {len(feats)}")
    moments = [mean_cov(f) for f in feats]
    return _pairwise_sq_diff([m for m, _ in moments]) + _pairwise_sq_diff([c for _, c in moments])


def pearson_matrix(seq_features, domain_id=None):
    """Sequence-averaged ``T x T`` correlation between epoch feature vectors.

    For every sequence, epoch vectors are correlated across the feature
    axis.  An epoch vector with zero variance correlates as 0 with
    everything (itself included) and sets ``degenerate``.
    """
    x = ad.constant(seq_features)
    if x.ndim != 3:
        raise DimensionError(f"pearson_matrix expects (n_seq, T, D), got shape {x.shape}")
    n_seq, T, D = x.shape
    if n_seq < 1:
        raise ContractError("pearson_matrix needs at least one sequence")
    if D < 2:
        raise ContractError(f"pearson_matrix needs D >= 2, got D={D}")

    centered = x - ad.broadcast_to(x.mean(axis=2, keepdims=True), x.shape)
    norms = ad.sqrt(ad.square(centered).sum(axis=2, keepdims=True))
    ok = norms.data > DEGENERATE_STD * np.sqrt(D)
    safe = norms + np.where(ok, 0.0, 1.0)
    unit = (centered / ad.broadcast_to(safe, x.shape)) * np.broadcast_to(ok, x.shape).astype(float)
    r = (unit @ unit.transpose(0, 2, 1)).mean(axis=0)
    return CorrelationMatrix(r, domain_id, bool(not ok.all()))


def seq_align_loss(mats):
    mats = list(mats)
    if len(mats) < 2:
        raise ContractError(f"sequence alignment needs at least 2 matrices, got {len(mats)}")
    T = mats[0].r.shape
    for m in mats[1:]:
        if m.r.shape != T:
            raise ContractError(f"correlation matrices differ in shape: {T} vs {m.r.shape}")
    return _pairwise_sq_diff([m.r for m in mats])
