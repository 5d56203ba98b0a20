"""Confusion-matrix based multiclass metrics and convergence tracking.

Conventions: any 0/0 ratio is 0, and macro averages run over all classes,
including ones with no support in the evaluated set (they contribute F1 = 0).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

NEVER = "never"
ZERO_SUPPORT_CONVENTION = "zero-support classes count as F1=0 in macro averages"


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    preds = np.asarray(preds, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels differ in length ({preds.size} vs {labels.size})")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contain class indices outside [0, {num_classes})")
    flat = labels * num_classes + preds
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    return _safe_div(np.diag(cm), cm.sum(axis=1))


def per_class_precision(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    return _safe_div(np.diag(cm), cm.sum(axis=0))


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    p = per_class_precision(cm)
    r = per_class_recall(cm)
    return _safe_div(2.0 * p * r, p + r)


@dataclass
class MetricsRecord:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    precision_macro: float
    precision_weighted: float
    loss: float
    per_class_recall: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(cm: np.ndarray, mean_loss: float) -> MetricsRecord:
    cm = np.asarray(cm)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    support = cm.sum(axis=1).astype(np.float64)
    weights = support / total
    f1 = per_class_f1(cm)
    prec = per_class_precision(cm)
    return MetricsRecord(
        accuracy=float(np.trace(cm) / total),
        f1_macro=float(f1.mean()),
        f1_weighted=float(weights @ f1),
        precision_macro=float(prec.mean()),
        precision_weighted=float(weights @ prec),
        loss=float(mean_loss),
        per_class_recall=[float(r) for r in per_class_recall(cm)],
    )


def rounds_to_threshold(accuracy_series: Sequence[float], threshold: float) -> int | str:
    """First 1-based round whose accuracy reaches ``threshold``, else ``NEVER``."""
    for t, acc in enumerate(accuracy_series, start=1):
        if acc is not None and acc >= threshold:
            return t
    return NEVER
