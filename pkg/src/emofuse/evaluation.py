"""Per-class F1, Macro-F1, accuracy and confusion matrices over the 8 classes."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CLASS_CODES, CLASSES, NUM_CLASSES, EmofuseError, LabelX, X, class_index, parse_label


class LengthMismatch(EmofuseError, ValueError):
    pass


class EmptyMatrix(EmofuseError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are reference classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(c < 0):
            raise ValueError("confusion matrix must be 8 x 8 with non-negative counts")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)


@dataclass(frozen=True)
class ScoreReport:
    per_class_f1: tuple[float, ...]
    macro_f1: float
    accuracy: float
    support: tuple[int, ...]


def _to_index(label) -> int:
    if not isinstance(label, (int, np.integer)) and parse_label(label) is X:
        raise LabelX("X labels cannot be scored")
    return class_index(label)


def confusion_matrix(refs: Sequence, preds: Sequence) -> ConfusionMatrix:
    refs, preds = list(refs), list(preds)
    if len(refs) != len(preds):
        raise LengthMismatch(f"{len(refs)} references vs {len(preds)} predictions")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    if refs:
        r = np.fromiter((_to_index(v) for v in refs), dtype=np.int64, count=len(refs))
        p = np.fromiter((_to_index(v) for v in preds), dtype=np.int64, count=len(preds))
        np.add.at(counts, (r, p), 1)
    return ConfusionMatrix(counts)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per class; any 0/0 precision, recall or F1 counts as 0."""
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    predicted = c.sum(axis=0)
    actual = c.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(NUM_CLASSES), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(NUM_CLASSES), where=actual > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros(NUM_CLASSES), where=denom > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean over all 8 classes, absent classes included."""
    return math.fsum(per_class_f1(cm).tolist()) / NUM_CLASSES


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy is undefined for an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def micro_f1(cm: ConfusionMatrix) -> float:
    # single-label multiclass: every miss is one fp and one fn, so micro P = R = accuracy
    return accuracy(cm)


def score(cm: ConfusionMatrix) -> ScoreReport:
    f1 = per_class_f1(cm)
    return ScoreReport(
        per_class_f1=tuple(float(v) for v in f1),
        macro_f1=math.fsum(f1.tolist()) / NUM_CLASSES,
        accuracy=accuracy(cm),
        support=tuple(int(v) for v in cm.counts.sum(axis=1)),
    )


def evaluate(refs: Sequence, preds: Sequence) -> tuple[ScoreReport, ConfusionMatrix]:
    cm = confusion_matrix(refs, preds)
    return score(cm), cm


def render_report(report: ScoreReport, cm: ConfusionMatrix, format: str = "text") -> str:
    if format == "text":
        return _render_text(report, cm)
    if format == "csv":
        return _render_csv(report, cm)
    raise ValueError(f"unknown report format {format!r}")


def _render_text(report: ScoreReport, cm: ConfusionMatrix) -> str:
    names = [c.display_name for c in CLASSES]
    width = max(len(n) for n in [*names, "F1-Macro"])
    lines = [f"{'Class':<{width}}  {'F1':>6}  {'Support':>7}"]
    for name, f1, sup in zip(names, report.per_class_f1, report.support):
        lines.append(f"{name:<{width}}  {f1:.4f}  {sup:>7d}")
    lines.append("-" * (width + 17))
    lines.append(f"{'Accuracy':<{width}}  {report.accuracy:.4f}")
    lines.append(f"{'F1-Macro':<{width}}  {report.macro_f1:.4f}")
    lines.append("")
    lines.append("Confusion matrix (row-normalized; rows = reference, columns = predicted)")
    lines.append("     " + " ".join(f"{c:>6}" for c in CLASS_CODES))
    for code, row in zip(CLASS_CODES, cm.row_normalized()):
        lines.append(f"{code:<4} " + " ".join(f"{v:6.4f}" for v in row))
    return "\n".join(lines) + "\n"


def _render_csv(report: ScoreReport, cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for code, f1 in zip(CLASS_CODES, report.per_class_f1):
        w.writerow([f"F1-{code}", f"{f1:.6f}"])
    for code, sup in zip(CLASS_CODES, report.support):
        w.writerow([f"Support-{code}", sup])
    w.writerow(["Accuracy", f"{report.accuracy:.6f}"])
    w.writerow(["F1-Macro", f"{report.macro_f1:.6f}"])
    w.writerow([])
    w.writerow(["reference\\predicted", *CLASS_CODES])
    for code, row in zip(CLASS_CODES, cm.row_normalized()):
        w.writerow([code, *(f"{v:.4f}" for v in row)])
    return buf.getvalue()


def confusion_csv(cm: ConfusionMatrix) -> str:
    """Raw counts, one row per reference class."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["reference\\predicted", *CLASS_CODES])
    for code, row in zip(CLASS_CODES, cm.counts):
        w.writerow([code, *(int(v) for v in row)])
    return buf.getvalue()
