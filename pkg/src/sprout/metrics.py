"""Confusion matrix, accuracy, per-class precision/recall/F1 reporting.

Rows are the true class, columns the predicted class; the diagonal holds
correct predictions. Zero denominators score 0 and raise a flag in the
report instead of faulting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: list[str]

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("empty confusion matrix has no accuracy")
        return self.trace / self.total


@dataclass
class ClassReport:
    name: str
    precision: float
    recall: float
    f1: float


@dataclass
class Report:
    rows: list[ClassReport]
    accuracy: float
    zero_division: bool = field(default=False)


def confusion_matrix(y_true, y_pred, k: int, class_names=None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ShapeError(f"label shapes differ: {y_true.shape} vs {y_pred.shape}")
    for arr, which in ((y_true, "true"), (y_pred, "predicted")):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{which} class index out of range [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    names = list(class_names) if class_names else [str(i) for i in range(k)]
    if len(names) != k:
        raise ValueError(f"expected {k} class names, got {len(names)}")
    return ConfusionMatrix(counts, names)


def classification_report(cm: ConfusionMatrix) -> Report:
    if cm.total == 0:
        raise ValueError("cannot report on an empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    zero_div = False
    rows = []
    for c, name in enumerate(cm.class_names):
        if col[c] == 0 or row[c] == 0:
            zero_div = True
        precision = diag[c] / col[c] if col[c] else 0.0
        recall = diag[c] / row[c] if row[c] else 0.0
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        rows.append(ClassReport(name, precision, recall, f1))
    return Report(rows, cm.accuracy(), zero_div)


def batch_accuracy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Fraction of rows whose argmax prediction matches the one-hot label."""
    if probs.shape != onehot.shape:
        raise ShapeError(f"probs {probs.shape} vs onehot {onehot.shape}")
    return float(np.mean(probs.argmax(axis=1) == onehot.argmax(axis=1)))


# -- artifact writers ---------------------------------------------------------


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("true\\predicted," + ",".join(cm.class_names) + "\n")
        for name, row in zip(cm.class_names, cm.counts):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")


def write_report_csv(report: Report, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class,precision,recall,f1\n")
        for r in report.rows:
            fh.write(f"{r.name},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f}\n")
        fh.write(f"accuracy,{report.accuracy:.6f},,\n")


def write_heatmap_png(cm: ConfusionMatrix, path, cell: int = 32) -> None:
    """Grayscale heatmap, one cell per matrix entry, darker = more counts."""
    from PIL import Image

    counts = cm.counts.astype(np.float64)
    peak = counts.max() or 1.0
    shade = (255 - np.round(counts / peak * 255)).astype(np.uint8)
    img = np.kron(shade, np.ones((cell, cell), dtype=np.uint8))
    Image.fromarray(img, mode="L").save(path)
