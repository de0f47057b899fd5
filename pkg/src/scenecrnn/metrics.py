"""Classification metrics with macro averaging."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int | None = None) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true, y_pred = np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)
    if n_classes is None:
        n_classes = int(max(y_true.max(initial=-1), y_pred.max(initial=-1))) + 1
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


@dataclass
class Report:
    accuracy: float
    macro_precision: float
    macro_f1: float
    confusion: np.ndarray


def report_from_confusion(cm) -> Report:
    """Accuracy plus per-class precision / F1 averaged over classes (0 where undefined)."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    accuracy = float(tp.sum() / cm.sum()) if cm.sum() > 0 else 0.0
    return Report(accuracy, float(precision.mean()), float(f1.mean()), cm.astype(int))


def classification_report(y_true, y_pred, n_classes: int | None = None) -> Report:
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes))
