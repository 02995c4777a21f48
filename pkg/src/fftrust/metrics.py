"""Accuracy, macro-F1 and hypnogram export."""

import csv

import numpy as np

from .exceptions import ContractError


class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    def __init__(self, n_classes, counts=None):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64) if counts is None else np.array(
            counts, dtype=np.int64
        )

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)


def accumulate(cm, y_true, y_pred):
    yt = np.asarray(y_true).reshape(-1)
    yp = np.asarray(y_pred).reshape(-1)
    if yt.shape != yp.shape:
        raise ContractError(f"y_true has {yt.size} labels but y_pred has {yp.size}")
    C = cm.n_classes
    if yt.size and (yt.min() < 0 or yt.max() >= C or yp.min() < 0 or yp.max() >= C):
        raise ContractError(f"labels must lie in [0, {C})")
    np.add.at(cm.counts, (yt.astype(np.intp), yp.astype(np.intp)), 1)
    return cm


def confusion_matrix(y_true, y_pred, n_classes):
    return accumulate(ConfusionMatrix(n_classes), y_true, y_pred)


def _require_nonempty(cm):
    if cm.total == 0:
        raise ContractError("metrics are undefined on an empty confusion matrix")


def accuracy(cm):
    _require_nonempty(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class_f1(cm):
    """F1 per class; zero whenever precision or recall has a zero denominator."""
    tp = np.diag(cm.counts).astype(float)
    pred = cm.counts.sum(axis=0).astype(float)
    true = cm.counts.sum(axis=1).astype(float)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm):
    """Unweighted mean of per-class F1 over all classes, absent ones included."""
    _require_nonempty(cm)
    return float(per_class_f1(cm).mean())


HYPNOGRAM_HEADER = ("epoch_index", "true_stage", "pred_stage", "mismatch_flag")


def export_hypnogram(y_true, y_pred, path):
    yt = np.asarray(y_true).reshape(-1)
    yp = np.asarray(y_pred).reshape(-1)
    if yt.shape != yp.shape:
        raise ContractError(f"y_true has {yt.size} epochs but y_pred has {yp.size}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HYPNOGRAM_HEADER)
        for i, (a, b) in enumerate(zip(yt, yp)):
            writer.writerow((i, int(a), int(b), int(a != b)))


def read_hypnogram(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HYPNOGRAM_HEADER:
        raise ContractError(f"{path}: not a hypnogram file")
    body = np.array(rows[1:], dtype=np.int64).reshape(-1, 4)
    return body[:, 1], body[:, 2]
