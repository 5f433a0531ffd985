import csv
import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from malgray.dataset import FAMILIES
from malgray.errors import LabelOutOfRange, LengthMismatch, ShapeMismatch
from malgray.evaluation import (
    ConfusionMatrix,
    argmax_rows,
    confusion,
    heatmap,
    predict,
    read_confusion_csv,
    report,
    write_accuracy_overlay,
)
from malgray.imaging import read_pgm
from malgray.models import build_scratch_cnn
from malgray.trainer import EpochMetrics


def test_argmax_examples():
    assert argmax_rows([[0.1, 0.8] + [0.0] * 7]).tolist() == [1]
    assert argmax_rows([[0.3] * 9]).tolist() == [0]
    with pytest.raises(ShapeMismatch):
        argmax_rows([1, 2, 3])


@given(st.lists(st.lists(st.integers(-100, 100), min_size=9, max_size=9), min_size=1, max_size=10),
       st.integers(-1000, 1000))
def test_argmax_shift_invariance(rows, c):
    # integer-valued logits keep shifts and affine maps exact in float64
    x = np.array(rows, dtype=np.float64)
    assert np.array_equal(argmax_rows(x), argmax_rows(x + c))
    assert np.array_equal(argmax_rows(x), argmax_rows(3 * x - 7))
    assert np.array_equal(argmax_rows(x), argmax_rows(np.exp(x / 50)))


def test_predict_shape_contract():
    g = build_scratch_cnn("tiny")
    out = predict(g, np.zeros((3, 1, 32, 32), np.float32))
    assert out.shape == (3,) and out.dtype == np.int64


def test_confusion_examples():
    cm = confusion([0, 0, 1], [0, 1, 1])
    assert cm.counts[0, 0] == 1 and cm.counts[0, 1] == 1 and cm.counts[1, 1] == 1 and cm.total == 3
    cm = confusion([0, 0, 1, 1, 1], [0, 0, 1, 1, 1], num_classes=2)
    assert cm.counts.tolist() == [[2, 0], [0, 3]]
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])
    with pytest.raises(LabelOutOfRange):
        confusion([0, 9], [0, 0])


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=1, max_size=200))
def test_confusion_identities(pairs):
    t, p = zip(*pairs)
    cm = confusion(t, p)
    assert cm.support().tolist() == np.bincount(t, minlength=9).tolist()
    assert cm.accuracy() == sum(a == b for a, b in pairs) / len(pairs)
    assert cm.trace == sum(a == b for a, b in pairs)


def test_heatmap_scale():
    cm = ConfusionMatrix(np.diag([5, 3, 0, 0, 0, 0, 0, 0, 2]) + np.eye(9, k=1, dtype=np.int64) * 0)
    img = heatmap(cm, cell=4)
    assert (img.width, img.height) == (36, 36)
    assert img.pixel(0, 0) == 255 and img.pixel(0, 4) == 0
    counts = np.zeros((9, 9), np.int64)
    counts[0, 0], counts[0, 1] = 1, 3
    img = heatmap(ConfusionMatrix(counts), cell=1)
    assert img.pixel(0, 1) == 255 and img.pixel(0, 0) == 85


def _metrics(n, offset=0.0):
    return [EpochMetrics(e, "1", 1.0 / e, 0.5, 0.5 + offset + e / 100, 0.0) for e in range(1, n + 1)]


def test_report_files_and_simda_flag(tmp_path, caplog):
    counts = np.diag([30] * 9)
    simda = FAMILIES.index("Simda")
    counts[simda, simda] = 2
    counts[simda, 0] = 2
    with caplog.at_level(logging.WARNING):
        paths = report(_metrics(3), ConfusionMatrix(counts), tmp_path)
    rows = list(csv.DictReader(open(paths["per_class_accuracy.csv"])))
    by = {r["family"]: r for r in rows}
    assert float(by["Simda"]["recall"]) == 0.5 and by["Simda"]["low_support"] == "1"
    assert by["Gatak"]["recall"] == "1" and by["Gatak"]["low_support"] == "0"
    assert paths["low_support"] == ["Simda"]
    assert "Simda" in caplog.text
    assert read_confusion_csv(paths["confusion.csv"]) == ConfusionMatrix(counts)
    assert read_pgm(paths["confusion.pgm"]).width == 9 * 16


def test_identity_recalls(tmp_path):
    paths = report(_metrics(1), ConfusionMatrix(np.diag(np.arange(20, 29))), tmp_path)
    rows = list(csv.DictReader(open(paths["per_class_accuracy.csv"])))
    assert [float(r["recall"]) for r in rows] == [1.0] * 9


def test_overlay_two_runs(tmp_path):
    write_accuracy_overlay({"vgg": _metrics(4), "cnn": _metrics(2, 0.1)}, tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "epoch,vgg,cnn"
    assert lines[1] == "1,0.51,0.61"
    assert lines[4] == "4,0.54,"


def test_report_needs_metrics(tmp_path):
    with pytest.raises(ValueError):
        report([], ConfusionMatrix(np.eye(9, dtype=np.int64)), tmp_path)
