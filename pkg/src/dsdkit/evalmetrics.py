"""One-vs-rest classification metrics with unweighted macro averaging.

Ratios whose denominator is zero are reported as ``None`` rather than 0 so that
an empty class does not silently drag the macro average down; macro values
average only the classes where the metric is defined.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from dsdkit.errors import DimensionError, ValidationError


@dataclass(frozen=True)
class OutcomeCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    pre: Optional[float]
    rec: Optional[float]
    f1: Optional[float]
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_class: list[ClassMetrics]
    acc: Optional[float]
    pre: Optional[float]
    rec: Optional[float]
    f1: Optional[float]

    def to_dict(self) -> dict:
        return {
            "per_class": [asdict(c) for c in self.per_class],
            "macro": {"acc": self.acc, "pre": self.pre, "rec": self.rec, "f1": self.f1},
        }


def _check(preds, labels, num_classes: Optional[int] = None) -> tuple[np.ndarray, np.ndarray, int]:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise DimensionError(f"{len(preds)} predictions for {len(labels)} labels")
    if num_classes is None:
        num_classes = int(max(preds.max(initial=-1), labels.max(initial=-1))) + 1
    for name, arr in (("prediction", preds), ("label", labels)):
        if np.any((arr < 0) | (arr >= num_classes)):
            raise ValidationError(f"{name} outside [0, {num_classes})")
    return preds, labels, num_classes


def outcome_counts(preds, labels, cls: int) -> OutcomeCounts:
    """One-vs-rest TP/FP/TN/FN for class ``cls``."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise DimensionError(f"{len(preds)} predictions for {len(labels)} labels")
    p = preds == cls
    t = labels == cls
    return OutcomeCounts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        tn=int(np.sum(~p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def _ratio(num: int, den: int) -> Optional[float]:
    return 100.0 * num / den if den else None


def precision(c: OutcomeCounts) -> Optional[float]:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: OutcomeCounts) -> Optional[float]:
    return _ratio(c.tp, c.tp + c.fn)


def f1_score(pre: Optional[float], rec: Optional[float]) -> Optional[float]:
    """Harmonic mean of two percentages; absent if either is absent or both are 0."""
    if pre is None or rec is None or pre + rec == 0:
        return None
    return 2.0 * pre * rec / (pre + rec)


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def precision_recall_f1_accuracy(
    counts: Sequence[OutcomeCounts], correct: Optional[int] = None, n: Optional[int] = None
) -> MetricsReport:
    """Per-class and macro Pre/Rec/F1 (percent) from one-vs-rest counts.

    Accuracy is ``correct / n``. Given only per-class counts it is recovered as
    ``sum(tp) / n``, which is the same quantity for single-label predictions.
    """
    counts = list(counts)
    if not counts:
        raise ValidationError("no classes")
    if n is None:
        n = counts[0].n
    if correct is None:
        correct = sum(c.tp for c in counts)
    per_class = []
    for k, c in enumerate(counts):
        pre, rec = precision(c), recall(c)
        per_class.append(ClassMetrics(k, pre, rec, f1_score(pre, rec), c.tp + c.fn))
    return MetricsReport(
        per_class=per_class,
        acc=_ratio(correct, n),
        pre=_mean([c.pre for c in per_class]),
        rec=_mean([c.rec for c in per_class]),
        f1=_mean([c.f1 for c in per_class]),
    )


def classification_report(preds, labels, num_classes: Optional[int] = None) -> MetricsReport:
    preds, labels, m = _check(preds, labels, num_classes)
    counts = [outcome_counts(preds, labels, k) for k in range(m)]
    return precision_recall_f1_accuracy(counts, int(np.sum(preds == labels)), len(labels))


def relative_error_reduction(err_old: float, err_new: float) -> Optional[float]:
    """``(err_old - err_new) / err_old * 100``; absent when ``err_old`` is 0."""
    if err_old == 0:
        return None
    return (err_old - err_new) / err_old * 100.0
