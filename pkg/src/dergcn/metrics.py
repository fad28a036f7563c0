"""Confusion-matrix metrics: per-class accuracy/F1 and support-weighted WA/WF1."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionMismatch


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true, y_pred = np.asarray(y_true, np.int64), np.asarray(y_pred, np.int64)
    if y_true.shape != y_pred.shape:
        raise DimensionMismatch(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    for arr in (y_true, y_pred):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise DimensionMismatch(f"class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


@dataclass
class MetricsReport:
    confusion: np.ndarray
    support: np.ndarray
    per_class_acc: np.ndarray     # recall of each class
    per_class_precision: np.ndarray
    per_class_f1: np.ndarray
    accuracy: float
    wa: float
    wf1: float

    @classmethod
    def from_confusion(cls, cm: np.ndarray) -> "MetricsReport":
        """Scores are computed in exact rationals and rounded once to float."""
        cm = np.asarray(cm, dtype=np.int64)
        tp = np.diag(cm).astype(np.float64)
        support = cm.sum(axis=1)
        predicted = cm.sum(axis=0)
        recall = _safe_ratio(tp, support.astype(np.float64))
        precision = _safe_ratio(tp, predicted.astype(np.float64))
        # harmonic mean of precision and recall, simplified to 2 tp / (support + predicted)
        f1_exact = [Fraction(2 * int(t), int(s + p)) if t else Fraction(0)
                    for t, s, p in zip(np.diag(cm), support, predicted)]
        f1 = np.array([float(x) for x in f1_exact])
        n = int(support.sum())
        hits = int(np.diag(cm).sum())
        wa = float(Fraction(hits, n)) if n else 0.0
        wf1 = float(sum(int(s) * x for s, x in zip(support, f1_exact)) / n) if n else 0.0
        return cls(cm, support, recall, precision, f1, wa, wa, wf1)

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> "MetricsReport":
        return cls.from_confusion(confusion_matrix(y_true, y_pred, num_classes))

    @property
    def num_classes(self) -> int:
        return len(self.support)

    def to_text(self) -> str:
        w = 10
        lines = [f"{'class':>{w}}{'support':>{w}}{'acc':>{w}}{'prec':>{w}}{'f1':>{w}}"]
        for k in range(self.num_classes):
            lines.append(f"{k:>{w}d}{int(self.support[k]):>{w}d}{self.per_class_acc[k]:>{w}.4f}"
                         f"{self.per_class_precision[k]:>{w}.4f}{self.per_class_f1[k]:>{w}.4f}")
        lines.append(f"{'accuracy':>{w}}{self.accuracy:>{3 * w}.4f}")
        lines.append(f"{'WA':>{w}}{self.wa:>{3 * w}.4f}")
        lines.append(f"{'WF1':>{w}}{self.wf1:>{3 * w}.4f}")
        lines.append("confusion (rows = true, cols = predicted):")
        for row in self.confusion:
            lines.append(" ".join(f"{int(x):>6d}" for x in row))
        return "\n".join(lines)

    def to_kv(self) -> str:
        """Structured ``key=value`` lines, one metric per line."""
        out = [f"accuracy={self.accuracy!r}", f"wa={self.wa!r}", f"wf1={self.wf1!r}"]
        for k in range(self.num_classes):
            out.append(f"class.{k}.support={int(self.support[k])}")
            out.append(f"class.{k}.acc={float(self.per_class_acc[k])!r}")
            out.append(f"class.{k}.f1={float(self.per_class_f1[k])!r}")
        out.append("confusion=" + ";".join(",".join(str(int(x)) for x in r) for r in self.confusion))
        return "\n".join(out)


def majority_baseline(y_true, majority: int, num_classes: int) -> MetricsReport:
    """Metrics of the constant predictor ``majority`` on ``y_true``."""
    y_true = np.asarray(y_true, np.int64)
    return MetricsReport.from_predictions(y_true, np.full(len(y_true), majority), num_classes)


def majority_wf1_closed_form(y_true, majority: int) -> float:
    """WF1 of a constant predictor: p * 2p / (1 + p), p the share of ``majority``."""
    y_true = np.asarray(y_true)
    p = float(np.mean(y_true == majority)) if len(y_true) else 0.0
    return p * (2 * p / (1 + p)) if p > 0 else 0.0
