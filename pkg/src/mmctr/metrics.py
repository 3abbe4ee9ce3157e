"""Ranking and probability metrics, with a brute-force AUC cross-check."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

PROB_CLAMP = 1e-7


class UndefinedMetricError(ValueError):
    """AUC is undefined when only one class is present."""


@dataclass
class EvalResult:
    auc: float
    logloss: float
    n_samples: int
    n_pos: int

    def json_line(self, split: str, epoch: int) -> str:
        return json.dumps({"split": split, "epoch": epoch, "auc": self.auc,
                           "logloss": self.logloss, "n": self.n_samples})


def _split_classes(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be 1-d and equal length, "
                         f"got {s.shape} and {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined: {n_pos} positives, {n_neg} negatives")
    return s, pos, n_pos, n_neg


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic.

    Tied scores receive their average rank, so each tied positive-negative
    pair counts one half. Raises UndefinedMetricError if either class is
    missing rather than defaulting to 0.5.
    """
    s, pos, n_pos, n_neg = _split_classes(scores, labels)
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_bruteforce(scores, labels) -> float:
    """AUC by direct enumeration of all positive-negative pairs.

    Independent oracle for auc(); quadratic, intended for n up to ~10^4.
    """
    s, pos, n_pos, n_neg = _split_classes(scores, labels)
    p = s[pos][:, None]
    n = s[~pos][None, :]
    wins = np.count_nonzero(p > n)
    ties = np.count_nonzero(p == n)
    return float((wins + 0.5 * ties) / (n_pos * n_neg))


def logloss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("logloss of an empty batch is undefined")
    if p.min() < 0 or p.max() > 1:
        raise ValueError("probabilities must lie in [0, 1]")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())
