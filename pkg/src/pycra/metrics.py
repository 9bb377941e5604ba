"""Binary-classifier evaluation: ROC curves, AUC, F1 and balanced accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, UndefinedRocError
from .qcd import wilson_interval


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


@dataclass
class RocCurve:
    """Points sorted by increasing threshold (so TPR and FPR are non-increasing)."""

    points: list[RocPoint]
    auc: float

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p.threshold for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p.tpr for p in self.points])

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p.fpr for p in self.points])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "tpr", "fpr"])
            for p in self.points:
                w.writerow([repr(float(p.threshold)), repr(float(p.tpr)), repr(float(p.fpr))])
        return path


def _check(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ParameterError("scores and labels must be 1-D arrays of equal length")
    if not np.isfinite(s).all():
        raise ParameterError("scores must be finite")
    if y.all() or not y.any():
        raise UndefinedRocError("ROC needs both positive and negative examples")
    return s, y


def roc_curve(scores, labels, thresholds=None) -> RocCurve:
    """ROC of the rule ``score >= threshold``.

    With ``thresholds=None`` every distinct score is used plus ``+inf``, so the
    curve runs from (1, 1) to (0, 0) and the trapezoidal AUC equals the
    Mann-Whitney statistic with ties counted as one half.
    """
    s, y = _check(scores, labels)
    if thresholds is None:
        thr = np.concatenate([np.unique(s), [np.inf]])
    else:
        thr = np.unique(np.asarray(thresholds, dtype=float))
    pos, neg = s[y], s[~y]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    tpr = 1 - np.searchsorted(pos_sorted, thr, side="left") / pos.size
    fpr = 1 - np.searchsorted(neg_sorted, thr, side="left") / neg.size
    points = [RocPoint(float(t), float(a), float(b)) for t, a, b in zip(thr, tpr, fpr)]
    # trapezoid over fpr (reverse to increasing order), anchored at both corners
    xs = np.concatenate([[0.0], fpr[::-1], [1.0]])
    ys = np.concatenate([[0.0], tpr[::-1], [1.0]])
    auc = float(np.trapezoid(ys, xs)) if hasattr(np, "trapezoid") else float(np.trapz(ys, xs))
    return RocCurve(points, auc)


def mann_whitney_auc(scores, labels) -> float:
    """AUC by direct pairwise comparison; O(n_pos * n_neg)."""
    s, y = _check(scores, labels)
    pos, neg = s[y][:, None], s[~y][None, :]
    return float(((pos > neg).sum() + 0.5 * (pos == neg).sum()) / (pos.size * neg.size))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, predicted, truth) -> "Confusion":
        p = np.asarray(predicted, dtype=bool)
        t = np.asarray(truth, dtype=bool)
        return cls(int((p & t).sum()), int((p & ~t).sum()), int((~p & ~t).sum()), int((~p & t).sum()))

    @property
    def tpr(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else float("nan")

    @property
    def fpr(self) -> float:
        n = self.fp + self.tn
        return self.fp / n if n else float("nan")

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / n if n else float("nan")

    @property
    def balanced_accuracy(self) -> float:
        return 0.5 * (self.tpr + (1 - self.fpr))

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else float("nan")


def balanced_accuracy(predicted, truth) -> float:
    return Confusion.from_predictions(predicted, truth).balanced_accuracy


def f1_score(predicted, truth) -> float:
    return Confusion.from_predictions(predicted, truth).f1


def rate_with_ci(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float, float]:
    """Point estimate and Wilson interval of a binomial rate."""
    lo, hi = wilson_interval(successes, trials, confidence)
    return successes / trials, lo, hi
