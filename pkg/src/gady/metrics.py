"""Ranking metrics for anomaly scores (label 1 = anomalous, higher score = more anomalous)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class EvalResult:
    auc: float
    ap: float
    positives: int
    negatives: int

    def to_dict(self) -> dict:
        return asdict(self)


def _validate(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(f"{len(s)} scores but {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(positive outranks negative), ties worth 1/2."""
    s, y = _validate(scores, labels)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise MetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks give ties half credit
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def _pr_blocks(s, y):
    """Cumulative (tp, fp) after each distinct threshold, highest score first."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    return tp[last], fp[last]


def average_precision(scores, labels) -> float:
    """Sum over thresholds of (recall step) x precision; tied scores form one threshold."""
    s, y = _validate(scores, labels)
    pos = int(y.sum())
    if pos == 0:
        raise MetricError("average precision needs at least one positive")
    tp, fp = _pr_blocks(s, y)
    recall = tp / pos
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def pr_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, precision, recall) at each distinct score, descending."""
    s, y = _validate(scores, labels)
    pos = max(int(y.sum()), 1)
    tp, fp = _pr_blocks(s, y)
    thresholds = np.unique(s)[::-1]
    return thresholds, tp / (tp + fp), tp / pos


def evaluate_scores(scores, labels) -> EvalResult:
    s, y = _validate(scores, labels)
    pos = int(y.sum())
    return EvalResult(auc(s, y), average_precision(s, y), pos, len(y) - pos)


def dump_pr_csv(scores, labels, path) -> None:
    th, p, r = pr_curve(scores, labels)
    rows = ["threshold,precision,recall"] + [f"{a!r},{b!r},{c!r}" for a, b, c in zip(th, p, r)]
    Path(path).write_text("\n".join(rows) + "\n")


# -- brute-force references ---------------------------------------------------------


def auc_pairwise(scores, labels) -> float:
    """O(n^2) reference: average over all positive/negative pairs."""
    s, y = _validate(scores, labels)
    ps, ns = s[y == 1], s[y == 0]
    if not len(ps) or not len(ns):
        raise MetricError("AUC needs at least one positive and one negative")
    wins = 0.0
    for p in ps:
        for q in ns:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(ps) * len(ns))


def average_precision_enumerated(scores, labels) -> float:
    """Reference AP by recomputing precision/recall from scratch at every distinct threshold."""
    s, y = _validate(scores, labels)
    pos = int(y.sum())
    if pos == 0:
        raise MetricError("average precision needs at least one positive")
    total, prev_recall = 0.0, 0.0
    for th in sorted(set(s.tolist()), reverse=True):
        flagged = s >= th
        tp = int((flagged & (y == 1)).sum())
        recall = tp / pos
        precision = tp / int(flagged.sum())
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total
