"""Predictions, confusion matrices and report files."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .dataset import FAMILIES, NUM_CLASSES
from .errors import IoFailure, LabelOutOfRange, LengthMismatch, ShapeMismatch
from .imaging import GrayImage, write_pgm
from .tensor.graph import predict_proba

log = logging.getLogger(__name__)

# Families with fewer test samples than this get flagged in reports.
LOW_SUPPORT = 20


def argmax_rows(scores) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest index."""
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise ShapeMismatch(f"expected (N, K) scores, got {scores.shape}")
    return scores.argmax(axis=1).astype(np.int64)


def predict(graph, inputs, batch_size: int = 64) -> np.ndarray:
    """Class index per input row of ``(N, C, H, W)``."""
    if tuple(graph.output_shape) != (NUM_CLASSES,):
        raise ShapeMismatch(f"graph emits {graph.output_shape}, expected ({NUM_CLASSES},)")
    return argmax_rows(predict_proba(graph, inputs, batch_size))


def predict_manifest(graph, manifest, loader, batch_size: int = 64):
    """``(true_labels, predicted_labels)`` over every record, in manifest order."""
    recs = manifest.records
    preds = []
    for s in range(0, len(recs), batch_size):
        preds.append(predict(graph, loader(recs[s:s + batch_size]), batch_size))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return manifest.labels, pred


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true family and columns = predicted family."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def accuracy(self) -> float:
        return self.trace / self.total if self.total else math.nan

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def recall(self) -> np.ndarray:
        sup = self.support()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sup > 0, np.diag(self.counts) / np.maximum(sup, 1), np.nan)

    def row_normalized(self) -> np.ndarray:
        sup = self.support().astype(np.float64)[:, None]
        return np.divide(self.counts, sup, out=np.zeros(self.counts.shape), where=sup > 0)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion(true_labels, predicted_labels, num_classes: int = NUM_CLASSES) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true labels vs {p.size} predictions")
    for arr in (t, p):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def heatmap(cm: ConfusionMatrix, cell: int = 16) -> GrayImage:
    """Row-normalised matrix scaled so the largest cell is 255; each cell ``cell`` pixels wide."""
    norm = cm.row_normalized()
    peak = norm.max()
    vals = np.floor(norm / peak * 255 + 0.5) if peak > 0 else np.zeros_like(norm)
    px = np.kron(vals.astype(np.uint8), np.ones((cell, cell), dtype=np.uint8))
    return GrayImage(px)


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6g}"


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in cm.counts:
            w.writerow(int(v) for v in row)


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
    return ConfusionMatrix(np.array(rows, dtype=np.int64))


def write_accuracy_overlay(runs: Mapping[str, Sequence], path) -> None:
    """One row per epoch, one test-accuracy column per run; missing epochs left blank."""
    names = list(runs)
    table = {name: {int(m.epoch): m.test_accuracy for m in runs[name]} for name in names}
    epochs = sorted(set().union(*(t.keys() for t in table.values()))) if table else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + names)
        for e in epochs:
            w.writerow([e] + [_fmt(table[n][e]) if e in table[n] else "" for n in names])


def report(metrics: Union[Sequence, Mapping[str, Sequence]], cm: ConfusionMatrix, out_dir,
           cell: int = 16) -> dict:
    """Write ``accuracy_curve.csv``, ``confusion.csv``, ``per_class_accuracy.csv`` and ``confusion.pgm``.

    ``metrics`` is one run's EpochMetrics list or a ``{run_name: list}``
    mapping for overlays. Returns the written paths plus the names of
    families with fewer than ``LOW_SUPPORT`` test samples.
    """
    runs = dict(metrics) if isinstance(metrics, Mapping) else {"run": list(metrics)}
    if not runs or not any(len(v) for v in runs.values()):
        raise ValueError("report needs at least one epoch of metrics")
    paths = {k: os.path.join(out_dir, k) for k in
             ("accuracy_curve.csv", "confusion.csv", "per_class_accuracy.csv", "confusion.pgm")}
    try:
        os.makedirs(out_dir, exist_ok=True)
        write_accuracy_overlay(runs, paths["accuracy_curve.csv"])
        write_confusion_csv(cm, paths["confusion.csv"])
        recall, support = cm.recall(), cm.support()
        low = [FAMILIES[i] for i in range(len(support)) if support[i] < LOW_SUPPORT]
        with open(paths["per_class_accuracy.csv"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["family", "recall", "test_samples", "low_support"])
            for i, name in enumerate(FAMILIES[:len(support)]):
                w.writerow([name, _fmt(float(recall[i])), int(support[i]), int(support[i] < LOW_SUPPORT)])
        write_pgm(heatmap(cm, cell), paths["confusion.pgm"])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    for name in low:
        log.warning("%s has fewer than %d test samples; its recall is unreliable", name, LOW_SUPPORT)
    paths["low_support"] = low
    return paths
