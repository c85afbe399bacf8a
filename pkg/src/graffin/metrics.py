"""Evaluation measures for imbalanced node classification.

ALL is overall accuracy, LOW the accuracy on the smallest class, A.R. the
macro one-vs-rest AUC-ROC and F1 the macro F1-score. Undefined values (no
tail node in the mask, no class with both positives and negatives) are
returned as ``None``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("all_acc", "low_acc", "auc_macro", "f1_macro")


@dataclass(frozen=True)
class MetricsReport:
    all_acc: float
    low_acc: float | None
    auc_macro: float | None
    f1_macro: float
    per_class_acc: tuple[float | None, ...]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_acc"] = list(self.per_class_acc)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["all_acc"], d["low_acc"], d["auc_macro"], d["f1_macro"], tuple(d["per_class_acc"]))


def _mask_index(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ValueError(f"boolean mask of shape {mask.shape} for {n} nodes")
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


def predict_labels(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the smallest class id."""
    return np.argmax(scores, axis=1)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def overall_accuracy(pred_labels, true_labels, mask) -> float:
    pred, true = np.asarray(pred_labels), np.asarray(true_labels)
    idx = _mask_index(mask, true.shape[0])
    if idx.size == 0:
        raise ValueError("empty mask")
    return float(np.mean(pred[idx] == true[idx]))


def per_class_accuracy(pred_labels, true_labels, mask, num_classes: int) -> tuple[float | None, ...]:
    pred, true = np.asarray(pred_labels), np.asarray(true_labels)
    idx = _mask_index(mask, true.shape[0])
    out = []
    for k in range(num_classes):
        sel = idx[true[idx] == k]
        out.append(float(np.mean(pred[sel] == k)) if sel.size else None)
    return tuple(out)


def tail_accuracy(pred_labels, true_labels, mask, tail_class: int) -> float | None:
    """Accuracy over masked nodes whose true class is ``tail_class`` (None if there are none)."""
    pred, true = np.asarray(pred_labels), np.asarray(true_labels)
    idx = _mask_index(mask, true.shape[0])
    sel = idx[true[idx] == tail_class]
    if sel.size == 0:
        return None
    return float(np.mean(pred[sel] == tail_class))


def macro_f1(pred_labels, true_labels, mask, num_classes: int) -> float:
    """Unweighted mean of per-class F1 = 2TP / (2TP + FP + FN).

    A class with TP = FP = FN = 0 (absent and never predicted) scores 1.
    """
    pred, true = np.asarray(pred_labels), np.asarray(true_labels)
    idx = _mask_index(mask, true.shape[0])
    if idx.size == 0:
        raise ValueError("empty mask")
    p, t = pred[idx], true[idx]
    scores = []
    for k in range(num_classes):
        tp = np.sum((p == k) & (t == k))
        fp = np.sum((p == k) & (t != k))
        fn = np.sum((p != k) & (t == k))
        denom = 2 * tp + fp + fn
        scores.append(1.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(scores))


def auc_roc_per_class(prob_matrix, true_labels, mask, num_classes: int) -> list[float | None]:
    """One-vs-rest AUC per class from the Mann-Whitney rank sum (midranks for ties)."""
    probs, true = np.asarray(prob_matrix, dtype=np.float64), np.asarray(true_labels)
    idx = _mask_index(mask, true.shape[0])
    t = true[idx]
    out: list[float | None] = []
    for k in range(num_classes):
        pos = t == k
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            out.append(None)
            continue
        ranks = rankdata(probs[idx, k], method="average")
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        out.append(float(u / (n_pos * n_neg)))
    return out


def auc_roc_macro(prob_matrix, true_labels, mask, num_classes: int) -> float | None:
    """Mean one-vs-rest AUC over classes that have both positives and negatives in the mask."""
    per_class = [a for a in auc_roc_per_class(prob_matrix, true_labels, mask, num_classes) if a is not None]
    return float(np.mean(per_class)) if per_class else None


def evaluate(logits: np.ndarray, true_labels, mask, num_classes: int, tail_class: int) -> MetricsReport:
    pred = predict_labels(logits)
    return MetricsReport(
        all_acc=overall_accuracy(pred, true_labels, mask),
        low_acc=tail_accuracy(pred, true_labels, mask, tail_class),
        auc_macro=auc_roc_macro(softmax_rows(logits), true_labels, mask, num_classes),
        f1_macro=macro_f1(pred, true_labels, mask, num_classes),
        per_class_acc=per_class_accuracy(pred, true_labels, mask, num_classes),
    )


@dataclass(frozen=True)
class MeanDev:
    mean: float | None
    std: float | None
    n: int

    def formatted(self, scale: float = 100.0) -> str:
        if self.mean is None:
            return "n/a"
        return f"{self.mean * scale:.1f}^{self.std * scale:.1f}"

    def to_dict(self, scale: float = 100.0) -> dict:
        return {"mean": self.mean, "std": self.std, "n": self.n, "formatted": self.formatted(scale)}


def mean_dev(values: Sequence[float | None]) -> MeanDev:
    """Mean and population standard deviation, ignoring undefined entries."""
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return MeanDev(None, None, 0)
    arr = np.asarray(vals, dtype=np.float64)
    return MeanDev(float(arr.mean()), float(arr.std()), len(vals))


def aggregate(reports: Sequence[MetricsReport]) -> dict[str, MeanDev]:
    if not reports:
        raise ValueError("nothing to aggregate")
    return {name: mean_dev([getattr(r, name) for r in reports]) for name in METRIC_NAMES}


def aggregate_per_class(reports: Sequence[MetricsReport]) -> list[float | None]:
    k = len(reports[0].per_class_acc)
    return [mean_dev([r.per_class_acc[c] for r in reports]).mean for c in range(k)]
