"""Prediction metrics used by the CV harness and the benchmark."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def auc(score, label) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores receive midranks, so a tie between classes counts one half.
    """
    score, label = _pair(score, label)
    pos = label == 1
    n_pos = int(pos.sum())
    n_neg = label.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = rankdata(score)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def coverage(lo, hi, truth) -> float:
    lo, hi = _pair(lo, hi)
    _, truth = _pair(lo, truth)
    return float(np.mean((truth >= lo) & (truth <= hi)))
