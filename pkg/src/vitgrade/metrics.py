"""Confusion-matrix accumulation and the weighted one-vs-rest grading
metrics (wAcc / wSe / wSp), plus adjacency analysis of misclassifications.

Per level c (one-vs-rest): TP = cm[c][c], FN = support - TP,
FP = column sum - TP, TN = N - TP - FN - FP, with
Se = TP/(TP+FN), Sp = TN/(TN+FP), Acc = (TP+TN)/N. Overall values are
prevalence-weighted means; levels whose metric is undefined (zero
denominator) are excluded and their weight renormalized away.
"""

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import LabelError, VitgradeError

NUM_LEVELS = 4


class ConfusionMatrix:
    """Counts[i][j] = samples with true level i+1 predicted as level j+1."""

    def __init__(self, num_levels: int = NUM_LEVELS, counts=None):
        self.num_levels = num_levels
        if counts is None:
            self.counts = np.zeros((num_levels, num_levels), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_levels, num_levels):
                raise VitgradeError(
                    f"counts must be {num_levels}x{num_levels}, got {counts.shape}")
            if (counts < 0).any():
                raise VitgradeError("counts must be non-negative")
            self.counts = counts.copy()

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def accumulate(self, predictions: Sequence[int], labels: Sequence[int]) -> "ConfusionMatrix":
        preds = np.asarray(predictions, dtype=np.int64)
        labs = np.asarray(labels, dtype=np.int64)
        if preds.shape != labs.shape or preds.ndim != 1:
            raise LabelError(
                f"predictions {preds.shape} and labels {labs.shape} must be equal-length 1-D")
        for arr, what in ((preds, "prediction"), (labs, "label")):
            if arr.size and (arr.min() < 1 or arr.max() > self.num_levels):
                bad = arr[(arr < 1) | (arr > self.num_levels)][0]
                raise LabelError(f"{what} level {bad} outside 1..{self.num_levels}")
        np.add.at(self.counts, (labs - 1, preds - 1), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_levels != self.num_levels:
            raise VitgradeError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


@dataclass
class LevelMetrics:
    level: int
    support: int
    acc: float
    se: Optional[float]   # None when the level has no samples
    sp: Optional[float]   # None when every sample belongs to the level


@dataclass
class MetricsReport:
    per_level: list[LevelMetrics]
    wacc: float
    wse: float
    wsp: float
    confusion: np.ndarray
    adjacency_error_fraction: float

    def to_dict(self) -> dict:
        return {
            "per_level": [
                {"level": m.level, "acc": m.acc, "se": m.se, "sp": m.sp, "support": m.support}
                for m in self.per_level
            ],
            "overall": {"wacc": self.wacc, "wse": self.wse, "wsp": self.wsp},
            "confusion": self.confusion.tolist(),
            "adjacency_error_fraction": self.adjacency_error_fraction,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def format_table(self) -> str:
        """Percentage table with 2 decimals, one row per metric."""
        def pct(x):
            return "  n/a " if x is None else f"{100.0 * x:6.2f}"

        lines = ["metric  " + "".join(f" level{m.level}" for m in self.per_level) + " overall"]
        for key, overall in (("acc", self.wacc), ("se", self.wse), ("sp", self.wsp)):
            cells = "".join(" " + pct(getattr(m, key)) for m in self.per_level)
            lines.append(f"w{key:<6}{cells}  {100.0 * overall:6.2f}")
        lines.append(f"adjacent-error fraction: {self.adjacency_error_fraction:.4f}")
        return "\n".join(lines)


def per_level_metrics(cm: ConfusionMatrix) -> list[LevelMetrics]:
    n = cm.total
    if n < 1:
        raise VitgradeError("empty confusion matrix")
    out = []
    for c in range(cm.num_levels):
        tp = int(cm.counts[c, c])
        support = int(cm.counts[c].sum())
        fn = support - tp
        fp = int(cm.counts[:, c].sum()) - tp
        tn = n - tp - fn - fp
        acc = (tp + tn) / n
        se = tp / (tp + fn) if support > 0 else None
        sp = tn / (tn + fp) if (tn + fp) > 0 else None
        out.append(LevelMetrics(level=c + 1, support=support, acc=acc, se=se, sp=sp))
    return out


def weighted_overall(per_level: Sequence[Optional[float]], supports: Sequence[int]) -> float:
    """Prevalence-weighted mean; undefined entries drop out with their
    weight renormalized.

    Degenerate single-class case: every defined value can end up with zero
    weight (e.g. specificity when all samples share one level); the defined
    values are then averaged unweighted instead.
    """
    defined = [(v, w) for v, w in zip(per_level, supports, strict=True) if v is not None]
    if not defined:
        raise VitgradeError("no defined per-level values to aggregate")
    den = sum(w for _, w in defined)
    if den <= 0:
        return sum(v for v, _ in defined) / len(defined)
    return sum(w * v for v, w in defined) / den


def adjacency_stats(cm: ConfusionMatrix) -> float:
    """Fraction of misclassified samples whose predicted level is adjacent
    to the true one; 1.0 when there are no errors."""
    if cm.total < 1:
        raise VitgradeError("empty confusion matrix")
    errors = 0
    adjacent = 0
    for i in range(cm.num_levels):
        for j in range(cm.num_levels):
            if i == j:
                continue
            errors += int(cm.counts[i, j])
            if abs(i - j) == 1:
                adjacent += int(cm.counts[i, j])
    return adjacent / errors if errors else 1.0


def compute_report(cm: ConfusionMatrix) -> MetricsReport:
    levels = per_level_metrics(cm)
    supports = [m.support for m in levels]
    return MetricsReport(
        per_level=levels,
        wacc=weighted_overall([m.acc for m in levels], supports),
        wse=weighted_overall([m.se for m in levels], supports),
        wsp=weighted_overall([m.sp for m in levels], supports),
        confusion=cm.counts.copy(),
        adjacency_error_fraction=adjacency_stats(cm),
    )
