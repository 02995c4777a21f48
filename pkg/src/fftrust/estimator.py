"""scikit-learn compatible estimator wrapping the full training objective."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import backward
from .exceptions import ConfigError
from .model import ModelDims, classify, encode, init_params
from .autodiff import softmax
from .objective import Batch, Buffers, LossWeights, total_loss
from .optim import AdamW
from .validation import check_domains, check_sample_ids, check_sequence_labels, check_sequences

_SHUFFLE, _DROPOUT, _INIT = 1, 2, 3


def _stream(*words):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(w) for w in words])))


def stratified_batches(domains, batch_size, rng, domains_per_batch=2):
    """Shuffled mini-batch indices with at least two domains per batch.

    With ``domains_per_batch=k`` every batch is assembled from ``k`` equal
    chunks of ``batch_size // k`` items, each from a different domain, always
    drawing from the domains with the most remaining chunks.  With
    ``domains_per_batch=None`` all domains are interleaved evenly instead.
    Leftovers that would form a single-domain batch are merged into the
    previous batch.
    """
    domains = np.asarray(domains, dtype=object)
    names = sorted(set(domains.tolist()), key=str)
    if domains_per_batch is None or len(names) < 2:
        return _interleaved_batches(domains, batch_size, rng)
    k = min(int(domains_per_batch), len(names))
    chunk = max(1, batch_size // k)
    pools = {}
    for d in names:
        idx = np.flatnonzero(domains == d)
        idx = idx[rng.permutation(idx.size)]
        pools[d] = [idx[i:i + chunk] for i in range(0, idx.size, chunk)]
    batches = []
    while any(pools.values()):
        live = [d for d in names if pools[d]]
        tiebreak = rng.random(len(live))
        live = [d for _, _, d in sorted(zip([-len(pools[d]) for d in live], tiebreak, live))]
        pick = live[:k]
        part = np.concatenate([pools[d].pop(0) for d in pick])
        if len(pick) < 2 and batches:
            batches[-1] = np.concatenate([batches[-1], part])
        else:
            batches.append(part)
    return [batches[i] for i in rng.permutation(len(batches))]


def _interleaved_batches(domains, batch_size, rng):
    n = domains.size
    keys = np.empty(n)
    for d in sorted(set(domains.tolist()), key=str):
        idx = np.flatnonzero(domains == d)
        order = rng.permutation(idx.size)
        keys[idx[order]] = (np.arange(idx.size) + rng.random(idx.size)) / idx.size
    order = np.argsort(keys, kind="stable")
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    multi = len(set(domains.tolist())) > 1
    merged = []
    for b in batches:
        weak = len(b) < 2 or (multi and len(set(domains[b].tolist())) < 2)
        if merged and weak:
            merged[-1] = np.concatenate([merged[-1], b])
        else:
            merged.append(b)
    return merged


class FFTrustClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Noisy-label, domain-generalized per-epoch sequence classifier.

    ``X`` has shape ``(n_sequences, T, channels, epoch_len)`` and ``y`` holds
    one (possibly noisy) label per epoch, shape ``(n_sequences, T)``.
    ``fit`` additionally takes per-sequence domain ids, used by the
    alignment losses, and stable sample ids, used to key the EMA buffers.

    ``transform`` returns the sequence features ``(n_sequences, T, D)``;
    ``predict`` returns per-epoch stages.
    """

    def __init__(self, n_classes=5, feature_dim=32, hidden_dim=64, epochs=50, batch_size=32,
                 lr=1.2e-3, weight_decay=1e-4, dropout=0.1, lambda_ce=1.0, lambda_im=0.02,
                 lambda_elr=0.12, m_elr=0.92, lambda_f=0.08, m_f=0.9, lambda_rec=0.5,
                 lambda_ep=0.5, lambda_seq=0.5, warmup_start=20, warmup_end=25,
                 fourier_variant="linear", fourier_eps=1e-4, domains_per_batch=2, random_state=0):
        self.n_classes = n_classes
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.lambda_ce = lambda_ce
        self.lambda_im = lambda_im
        self.lambda_elr = lambda_elr
        self.m_elr = m_elr
        self.lambda_f = lambda_f
        self.m_f = m_f
        self.lambda_rec = lambda_rec
        self.lambda_ep = lambda_ep
        self.lambda_seq = lambda_seq
        self.warmup_start = warmup_start
        self.warmup_end = warmup_end
        self.fourier_variant = fourier_variant
        self.fourier_eps = fourier_eps
        self.domains_per_batch = domains_per_batch
        self.random_state = random_state

    def _loss_weights(self):
        return LossWeights(
            lambda_ce=self.lambda_ce, lambda_im=self.lambda_im, lambda_elr=self.lambda_elr,
            m_elr=self.m_elr, lambda_f=self.lambda_f, m_f=self.m_f, lambda_rec=self.lambda_rec,
            lambda_ep=self.lambda_ep, lambda_seq=self.lambda_seq, warmup_start=self.warmup_start,
            warmup_end=self.warmup_end, fourier_variant=self.fourier_variant,
            fourier_eps=self.fourier_eps,
        )

    def _validate_fit_input(self, X, y, domains, sample_ids):
        X = check_sequences(X)
        n, T = X.shape[:2]
        y = check_sequence_labels(y, n, T, self.n_classes)
        domains = check_domains(domains, n)
        sample_ids = check_sample_ids(sample_ids, n)
        weights = self._loss_weights()
        if weights.needs_alignment and len(set(domains.tolist())) < 2:
            raise ConfigError("alignment losses are enabled but the training data holds a single domain")
        return X, y, domains, sample_ids, weights

    def initialize(self, X, y, domains=None, sample_ids=None):
        """Validate inputs and set up parameters, buffers and optimizer state."""
        X, y, domains, sample_ids, weights = self._validate_fit_input(X, y, domains, sample_ids)
        self.dims_ = ModelDims(channels=X.shape[2], epoch_len=X.shape[3], T=X.shape[1],
                               D=self.feature_dim, C=self.n_classes, hidden=self.hidden_dim)
        self.params_ = init_params(self.dims_, np.random.SeedSequence([int(self.random_state), _INIT]))
        self.buffers_ = Buffers.from_weights(self.n_classes, weights)
        self.optimizer_ = AdamW(list(self.params_), lr=self.lr, weight_decay=self.weight_decay)
        self.classes_ = np.arange(self.n_classes)
        self.epoch_ = 0
        self.history_ = []
        self.loss_curve_ = []
        self._train_data = (X, y, domains, sample_ids, weights)
        return self

    def fit(self, X, y, domains=None, sample_ids=None, epoch_callback=None, step_callback=None):
        self.initialize(X, y, domains, sample_ids)
        return self.continue_fit(epoch_callback=epoch_callback, step_callback=step_callback)

    def continue_fit(self, X=None, y=None, domains=None, sample_ids=None, until=None,
                     epoch_callback=None, step_callback=None):
        """Train from ``epoch_`` up to ``until`` (default ``epochs``).

        Pass the data again when the estimator was restored from a
        checkpoint rather than initialized in this process.
        """
        check_is_fitted(self, "params_")
        if X is not None:
            self._train_data = self._validate_fit_input(X, y, domains, sample_ids)
        X, y, domains, sample_ids, weights = self._train_data
        until = self.epochs if until is None else min(until, self.epochs)
        while self.epoch_ < until:
            record = self._run_epoch(X, y, domains, sample_ids, weights, step_callback)
            self.history_.append(record)
            self.epoch_ += 1
            if epoch_callback is not None:
                epoch_callback(self, record)
        return self

    def _run_epoch(self, X, y, domains, sample_ids, weights, step_callback):
        t = self.epoch_
        rng = _stream(self.random_state, t, _SHUFFLE)
        sums, n_steps = {}, 0
        for step, idx in enumerate(stratified_batches(domains, self.batch_size, rng, self.domains_per_batch)):
            batch = Batch(X[idx], y[idx], sample_ids[idx], domains[idx])
            seed = np.random.SeedSequence([int(self.random_state), t, step, _DROPOUT])
            loss, bd = total_loss(batch, self.params_, self.buffers_, weights, t,
                                  dropout=self.dropout, training=True, rng_seed=seed)
            backward(loss)
            self.optimizer_.step()
            self.loss_curve_.append(bd.weighted_total)
            for key in ("cls_ffcdr", "elr", "felr", "rec", "ep_align", "seq_align", "weighted_total"):
                sums[key] = sums.get(key, 0.0) + getattr(bd, key)
            n_steps += 1
            if step_callback is not None:
                step_callback(t, step, bd)
        record = {k: v / n_steps for k, v in sums.items()}
        record.update(epoch=t, alpha=bd.weights["alpha"], steps=n_steps)
        return record

    def decision_function(self, X, chunk=256):
        """Per-epoch logits ``(n, T, C)``."""
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.dims_)
        out = [classify(encode(X[i:i + chunk], self.params_), self.params_).data
               for i in range(0, X.shape[0], chunk)]
        return np.concatenate(out, axis=0)

    def predict_proba(self, X):
        return softmax(self.decision_function(X)).data

    def predict(self, X):
        return self.decision_function(X).argmax(axis=-1)

    def transform(self, X, chunk=256):
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.dims_)
        return np.concatenate([encode(X[i:i + chunk], self.params_).data
                               for i in range(0, X.shape[0], chunk)], axis=0)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)

    def score(self, X, y, sample_weight=None):
        """Mean per-epoch accuracy."""
        pred = self.predict(X)
        y = np.asarray(y).reshape(pred.shape)
        return float((pred == y).mean())
