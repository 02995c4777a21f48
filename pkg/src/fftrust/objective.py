"""Composite training objective.

``total = lam_ce * ff_cdr + alpha(t) * elr + felr
          + lam_rec * rec + lam_ep * ep_align + lam_seq * seq_align``

``elr`` and ``felr`` already carry their own strengths (``lambda_elr`` and
``lambda_f``), so ``alpha(t) * lambda_elr`` is the effective temporal ELR
weight.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .align import epoch_align_loss, pearson_matrix, seq_align_loss
from .autodiff import Tensor
from .exceptions import ContractError, DimensionError
from .model import classify, decode, encode
from .regularizers import (
    ELRBuffer,
    FourierBuffer,
    WarmupSchedule,
    elr_update_and_loss,
    ff_cdr_loss,
    fourier_loss_log,
    fourier_update_and_loss,
    warmup_alpha,
)
from .spectral import rfft_magnitude


@dataclass
class LossWeights:
    lambda_ce: float = 1.0
    lambda_im: float = 0.02
    lambda_elr: float = 0.12
    m_elr: float = 0.92
    lambda_f: float = 0.08
    m_f: float = 0.9
    lambda_rec: float = 0.5
    lambda_ep: float = 0.5
    lambda_seq: float = 0.5
    warmup_start: float = 20
    warmup_end: float = 25
    fourier_variant: str = "linear"
    fourier_eps: float = 1e-4

    def __post_init__(self):
        for name in ("lambda_ce", "lambda_im", "lambda_elr", "lambda_f",
                     "lambda_rec", "lambda_ep", "lambda_seq"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.fourier_variant not in ("linear", "log"):
            raise ContractError(f"fourier_variant must be 'linear' or 'log', got {self.fourier_variant!r}")
        if not 0 < self.fourier_eps < 1:
            raise ContractError(f"fourier_eps must lie in (0, 1), got {self.fourier_eps}")
        self.schedule  # validates the warm-up bounds

    @property
    def schedule(self):
        return WarmupSchedule(self.warmup_start, self.warmup_end)

    @property
    def needs_alignment(self):
        return self.lambda_ep > 0 or self.lambda_seq > 0


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    sample_ids: np.ndarray
    domains: np.ndarray

    def __len__(self):
        return len(self.sample_ids)


@dataclass
class Buffers:
    elr: ELRBuffer
    fourier: FourierBuffer

    @classmethod
    def from_weights(cls, n_classes, weights):
        return cls(
            ELRBuffer(n_classes, weights.m_elr, weights.lambda_elr),
            FourierBuffer(None, weights.m_f, weights.lambda_f),
        )


@dataclass
class LossBreakdown:
    cls_ffcdr: float
    elr: float
    felr: float
    rec: float
    ep_align: float
    seq_align: float
    weighted_total: float
    weights: dict = field(default_factory=dict)

    def recompose(self):
        w = self.weights
        return (w["lambda_ce"] * self.cls_ffcdr + w["alpha"] * self.elr + self.felr
                + w["lambda_rec"] * self.rec + w["lambda_ep"] * self.ep_align
                + w["lambda_seq"] * self.seq_align)

    def to_dict(self):
        return asdict(self)


def reconstruction_loss(x, x_hat):
    """Per-sequence mean over epochs of the squared epoch error, averaged over the batch."""
    x, x_hat = ad.constant(x), ad.constant(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"reconstruction_loss: shapes {x.shape} and {x_hat.shape} differ")
    B, T = x.shape[0], x.shape[1]
    return ad.square(x_hat - x).sum() * (1.0 / (B * T))


def _domain_slices(domains):
    domains = np.asarray(domains)
    return [(d, np.flatnonzero(domains == d)) for d in np.unique(domains)]


def alignment_losses(F, domains):
    """Epoch-level moment and sequence-level correlation alignment of ``F``."""
    parts = _domain_slices(domains)
    if len(parts) < 2:
        raise ContractError(f"alignment requires at least 2 domains in the batch, got {len(parts)}")
    D = F.shape[2]
    per_domain = [ad.take(F, idx, axis=0) for _, idx in parts]
    ep = epoch_align_loss([f.reshape(-1, D) for f in per_domain])
    seq = seq_align_loss([pearson_matrix(f, d) for (d, _), f in zip(parts, per_domain)])
    return ep, seq


def total_loss(batch, params, buffers, weights, epoch_t, dropout=0.0, training=True, rng_seed=None,
               update_buffers=True):
    """Forward the batch once and assemble every loss term.

    Terms whose weight is zero are evaluated for the breakdown but left out
    of the differentiable total.  Buffers are EMA-updated as a side effect
    unless ``update_buffers`` is false, in which case the stored targets are
    read as they are.
    """
    x = np.asarray(batch.x, dtype=np.float64)
    F = encode(x, params, dropout_rate=dropout, training=training, rng_seed=rng_seed)
    x_hat = decode(F, params)
    z = classify(F, params)
    B, T, C = z.shape

    cls, probs, _, _ = ff_cdr_loss(z, batch.y, weights.lambda_im, return_parts=True)
    rec = reconstruction_loss(x, x_hat)

    n_domains = len(np.unique(batch.domains))
    if n_domains >= 2:
        ep, seq = alignment_losses(F, batch.domains)
    elif weights.needs_alignment:
        raise ContractError("alignment weights are nonzero but the batch holds a single domain")
    else:
        ep = seq = Tensor(0.0)

    sids = np.asarray(batch.sample_ids, dtype=np.int64)
    tokens = np.stack([np.repeat(sids, T), np.tile(np.arange(T), B)], axis=1)
    elr = elr_update_and_loss(buffers.elr, tokens, probs.reshape(B * T, C), update=update_buffers)

    spectrum = rfft_magnitude(F)
    if weights.fourier_variant == "log":
        felr = fourier_loss_log(buffers.fourier, sids, spectrum, weights.fourier_eps, update=update_buffers)
    else:
        felr = fourier_update_and_loss(buffers.fourier, sids, spectrum, update=update_buffers)

    alpha = warmup_alpha(weights.schedule, epoch_t)
    terms = [
        (weights.lambda_ce, cls),
        (alpha, elr),
        (1.0, felr),
        (weights.lambda_rec, rec),
        (weights.lambda_ep, ep),
        (weights.lambda_seq, seq),
    ]
    total = None
    for w, term in terms:
        # a zero-strength regularizer contributes nothing, not even a graph edge
        if w == 0 or (term is elr and buffers.elr.lambda_elr == 0) or (
            term is felr and buffers.fourier.lambda_f == 0
        ):
            continue
        piece = term * w if w != 1.0 else term
        total = piece if total is None else total + piece
    if total is None:
        total = Tensor(0.0)

    snapshot = {
        "lambda_ce": weights.lambda_ce, "alpha": alpha, "lambda_rec": weights.lambda_rec,
        "lambda_ep": weights.lambda_ep, "lambda_seq": weights.lambda_seq,
        "lambda_im": weights.lambda_im, "lambda_elr": buffers.elr.lambda_elr,
        "lambda_f": buffers.fourier.lambda_f,
    }
    breakdown = LossBreakdown(
        cls_ffcdr=cls.item(), elr=elr.item(), felr=felr.item(), rec=rec.item(),
        ep_align=ep.item(), seq_align=seq.item(), weighted_total=total.item(), weights=snapshot,
    )
    return total, breakdown
