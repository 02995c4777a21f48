"""Noisy-label regularizers.

* temporal early-learning regularization: per-token EMA of predicted
  probabilities, penalized through ``-log(1 - <p, P>)``;
* spectral early-learning regularization: per-sequence EMA of feature
  magnitude spectra, penalized through ``1 - max(0, cos)`` (or its clipped
  log form);
* confidence-diversity penalty: mean per-sample entropy minus entropy of
  the batch-mean prediction, added to epoch-level cross-entropy.

EMA targets never receive gradient; the current predictions and spectra do.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, DataError
from .spectral import DEGENERATE_NORM, Spectrum

ELR_CLIP = 1.0 - 1e-7
PROB_TOL = 1e-6


def _check_prob_rows(p, what):
    if np.any(p < -PROB_TOL) or np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_TOL):
        raise ContractError(f"{what}: every row must be a probability vector")


class _KeyedStore:
    """Growable ``key -> row`` float64 table."""

    def __init__(self, width):
        self.width = width
        self.index = {}
        self.values = np.zeros((0, width))

    def __len__(self):
        return len(self.index)

    def rows(self, keys, init):
        """Row indices for ``keys``; unseen keys get rows filled by ``init(i)``."""
        idx = np.empty(len(keys), dtype=np.intp)
        fresh = []
        for i, key in enumerate(keys):
            row = self.index.get(key)
            if row is None:
                row = len(self.index)
                self.index[key] = row
                fresh.append((i, row))
            idx[i] = row
        if fresh:
            needed = len(self.index)
            if needed > self.values.shape[0]:
                grown = np.zeros((max(needed, 2 * self.values.shape[0]), self.width))
                grown[: self.values.shape[0]] = self.values
                self.values = grown
            for i, row in fresh:
                self.values[row] = init(i)
        return idx

    def get(self, key):
        return self.values[self.index[key]].copy()

    def state(self):
        keys = sorted(self.index, key=self.index.get)
        return keys, self.values[: len(keys)].copy()

    def load(self, keys, values):
        self.index = {k: i for i, k in enumerate(keys)}
        self.values = np.array(values, dtype=np.float64).reshape(len(keys), self.width)


class ELRBuffer:
    """EMA prediction targets keyed by ``(sample_id, epoch_position)``."""

    def __init__(self, n_classes, momentum=0.9, lambda_elr=0.1):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"ELR momentum must lie in (0, 1), got {momentum}")
        if lambda_elr < 0:
            raise ContractError(f"lambda_elr must be >= 0, got {lambda_elr}")
        self.n_classes = n_classes
        self.momentum = momentum
        self.lambda_elr = lambda_elr
        self._store = _KeyedStore(n_classes)

    def __len__(self):
        return len(self._store)

    def target(self, token):
        return self._store.get(tuple(token))

    def lookup(self, ids):
        """Current targets of ``ids`` without modifying the buffer (uniform if unseen)."""
        uniform = np.full(self.n_classes, 1.0 / self.n_classes)
        keys = [tuple(int(v) for v in k) for k in ids]
        index = self._store.index
        return np.array([self._store.values[index[k]] if k in index else uniform for k in keys])

    def update(self, ids, p):
        """EMA-update the targets of ``ids`` with probabilities ``p``; return them."""
        keys = [tuple(int(v) for v in k) for k in ids]
        if len(set(keys)) != len(keys):
            raise ContractError("token ids must be unique within one update")
        uniform = np.full(self.n_classes, 1.0 / self.n_classes)
        rows = self._store.rows(keys, lambda i: uniform)
        vals = self._store.values
        vals[rows] = self.momentum * vals[rows] + (1.0 - self.momentum) * p
        return vals[rows].copy()

    def state(self):
        keys, values = self._store.state()
        return {"keys": [list(k) for k in keys], "values": values}

    def load_state(self, state):
        self._store.load([tuple(k) for k in state["keys"]], state["values"])


class FourierBuffer:
    """EMA of raw magnitude spectra keyed by sample id."""

    def __init__(self, width=None, momentum=0.9, lambda_f=0.1):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"Fourier momentum must lie in (0, 1), got {momentum}")
        if lambda_f < 0:
            raise ContractError(f"lambda_f must be >= 0, got {lambda_f}")
        self.momentum = momentum
        self.lambda_f = lambda_f
        self._store = None if width is None else _KeyedStore(width)
        self.last_degenerate = 0

    def __len__(self):
        return 0 if self._store is None else len(self._store)

    @property
    def width(self):
        return None if self._store is None else self._store.width

    def target(self, sample_id):
        return self._store.get(int(sample_id))

    def lookup(self, ids, mags):
        """Current targets of ``ids`` without modifying the buffer (``mags`` if unseen)."""
        mags = np.asarray(mags, dtype=np.float64)
        if self._store is None:
            return mags.copy()
        index = self._store.index
        return np.array([self._store.values[index[int(k)]] if int(k) in index else mags[i]
                         for i, k in enumerate(ids)])

    def update(self, ids, mags):
        """EMA-update with raw flattened magnitudes ``mags`` ``(B, width)``."""
        mags = np.asarray(mags, dtype=np.float64)
        if self._store is None:
            self._store = _KeyedStore(mags.shape[1])
        if mags.shape[1] != self._store.width:
            raise ContractError(
                f"spectrum length {mags.shape[1]} does not match buffer length {self._store.width}"
            )
        keys = [int(k) for k in ids]
        if len(set(keys)) != len(keys):
            raise ContractError("sequence ids must be unique within one update")
        rows = self._store.rows(keys, lambda i: mags[i])
        vals = self._store.values
        vals[rows] = self.momentum * vals[rows] + (1.0 - self.momentum) * mags
        return vals[rows].copy()

    def state(self):
        if self._store is None:
            return {"keys": [], "values": np.zeros((0, 0)), "width": 0}
        keys, values = self._store.state()
        return {"keys": list(keys), "values": values, "width": self._store.width}

    def load_state(self, state):
        width = int(state.get("width", 0))
        if width == 0:
            self._store = None
            return
        self._store = _KeyedStore(width)
        self._store.load([int(k) for k in state["keys"]], state["values"])


@dataclass
class WarmupSchedule:
    t_start: float = 20
    t_end: float = 35

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ContractError(f"warm-up needs t_start < t_end, got {self.t_start} >= {self.t_end}")


def warmup_alpha(sched, t):
    """Linear ramp from 0 at ``t_start`` to 1 at ``t_end``."""
    return float(np.clip((t - sched.t_start) / (sched.t_end - sched.t_start), 0.0, 1.0))


# -- temporal ELR ------------------------------------------------------------

def elr_penalty(p, targets, lambda_elr):
    """``-lambda * mean_n log(1 - <p_n, targets_n>)`` with the product clipped."""
    inner = (p * ad.constant(targets)).sum(axis=1)
    return -lambda_elr * ad.log(1.0 - ad.clip(inner, hi=ELR_CLIP)).mean()


def elr_update_and_loss(buf, ids, p, update=True):
    """Update the buffer with ``p`` (as a constant) and return the penalty.

    With ``update=False`` the stored targets are used as they are, which
    makes the loss a plain function of ``p`` (used by gradient checks).
    """
    p = ad.constant(p)
    if p.ndim != 2 or p.shape[1] != buf.n_classes:
        raise ContractError(f"expected probabilities of shape (N, {buf.n_classes}), got {p.shape}")
    _check_prob_rows(p.data, "elr_update_and_loss")
    targets = buf.update(ids, p.data) if update else buf.lookup(ids)
    return elr_penalty(p, targets, buf.lambda_elr)


# -- spectral ELR ------------------------------------------------------------

def _cosines(m_flat, q_flat):
    """Cosine between rows of a differentiable ``m_flat`` and constant ``q_flat``.

    Rows where either side has norm below ``1e-12`` are reported as
    degenerate and get cosine 0 with no gradient.
    """
    q = np.asarray(q_flat, dtype=np.float64)
    q_norm = np.linalg.norm(q, axis=1)
    m_norm_val = np.linalg.norm(m_flat.data, axis=1)
    ok = (q_norm >= DEGENERATE_NORM) & (m_norm_val >= DEGENERATE_NORM)
    q_unit = np.where(ok[:, None], q / np.where(q_norm > 0, q_norm, 1.0)[:, None], 0.0)
    m_norm = ad.sqrt(ad.square(m_flat).sum(axis=1, keepdims=True)) + np.where(ok, 0.0, 1.0)[:, None]
    m_unit = m_flat / ad.broadcast_to(m_norm, m_flat.shape)
    return (m_unit * q_unit).sum(axis=1), ok


def fourier_penalty(m_flat, q_flat, lambda_f):
    """``lambda_f * mean_b [1 - max(0, cos(m_b, q_b))]``; degenerate rows add 0."""
    m_flat = ad.constant(m_flat)
    cos, ok = _cosines(m_flat, q_flat)
    per_seq = (1.0 - ad.relu(cos)) * ok.astype(float)
    return lambda_f * per_seq.mean(), int((~ok).sum())


def fourier_log_penalty(m_flat, q_flat, lambda_f, epsilon=1e-4):
    """``-lambda_f * mean_b log(1 - clip(cos, 0, 1 - epsilon))``."""
    m_flat = ad.constant(m_flat)
    cos, ok = _cosines(m_flat, q_flat)
    per_seq = -ad.log(1.0 - ad.clip(cos, 0.0, 1.0 - epsilon)) * ok.astype(float)
    return lambda_f * per_seq.mean(), int((~ok).sum())


def _flatten_spectrum(m_cur):
    mags = m_cur.mags if isinstance(m_cur, Spectrum) else ad.constant(m_cur)
    if not np.all(np.isfinite(mags.data)):
        raise ContractError("spectra must be finite")
    return mags.reshape(mags.shape[0], -1)


def fourier_update_and_loss(buf, ids, m_cur, update=True):
    flat = _flatten_spectrum(m_cur)
    q = buf.update(ids, flat.data) if update else buf.lookup(ids, flat.data)
    loss, n_bad = fourier_penalty(flat, q, buf.lambda_f)
    buf.last_degenerate = n_bad
    return loss


def fourier_loss_log(buf, ids, m_cur, epsilon=1e-4, update=True):
    flat = _flatten_spectrum(m_cur)
    q = buf.update(ids, flat.data) if update else buf.lookup(ids, flat.data)
    loss, n_bad = fourier_log_penalty(flat, q, buf.lambda_f, epsilon)
    buf.last_degenerate = n_bad
    return loss


# -- confidence-diversity ----------------------------------------------------

def entropy(p, axis=-1):
    return -ad.xlogx(p).sum(axis=axis)


def cdr_penalty(p_seq):
    """Mean per-row entropy minus entropy of the mean row (natural log)."""
    p_seq = ad.constant(p_seq)
    if p_seq.ndim != 2 or p_seq.shape[0] < 1:
        raise ContractError(f"cdr_penalty expects a (B, C) matrix with B >= 1, got {p_seq.shape}")
    _check_prob_rows(p_seq.data, "cdr_penalty")
    return entropy(p_seq).mean() - entropy(p_seq.mean(axis=0))


def cross_entropy(z, labels):
    """Epoch-level cross-entropy summed over the sequence, averaged over the batch."""
    z = ad.constant(z)
    y = np.asarray(labels)
    C = z.shape[-1]
    if y.shape != z.shape[:-1]:
        raise DataError(f"labels of shape {y.shape} do not match logits {z.shape}")
    bad = np.argwhere((y < 0) | (y >= C))
    if bad.size:
        raise DataError(f"label {int(y[tuple(bad[0])])} at position {tuple(int(i) for i in bad[0])} outside [0, {C})")
    picked = ad.gather_last(ad.log_softmax(z), y)
    return -picked.sum() * (1.0 / z.shape[0])


def ff_cdr_loss(z, y_noisy, lambda_im, return_parts=False):
    """Cross-entropy plus ``lambda_im`` times the confidence-diversity penalty.

    With ``return_parts`` also returns ``(probabilities, ce, cdr)``, where
    the probabilities are the per-epoch softmax of ``z``.
    """
    z = ad.constant(z)
    ce = cross_entropy(z, y_noisy)
    probs = ad.softmax(z)
    cdr = cdr_penalty(probs.mean(axis=1))
    total = ce + lambda_im * cdr
    if return_parts:
        return total, probs, ce, cdr
    return total
