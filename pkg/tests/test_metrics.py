"""Confusion matrix math and the per-class report.

The seven-class matrix in `reference_matrix` is the unique 100-per-class
assignment consistent with the published per-class precision/recall table;
`test_reference_report_two_decimals` locks all 21 rounded values and the
overall accuracy against it.
"""

import numpy as np
import pytest

from sprout.errors import ShapeError
from sprout.metrics import (ConfusionMatrix, batch_accuracy,
                            classification_report, confusion_matrix,
                            write_confusion_csv, write_heatmap_png,
                            write_report_csv)

CLASS_NAMES = [
    "bacterial_blight",
    "curl_virus",
    "healthy",
    "herbicide_growth_damage",
    "leaf_hopper_jassids",
    "leaf_redding",
    "leaf_variegation",
]

# rows true, columns predicted; 100 samples per class, 11 errors total
ERRORS = {
    ("curl_virus", "bacterial_blight"): 1,
    ("curl_virus", "leaf_redding"): 1,
    ("healthy", "bacterial_blight"): 1,
    ("healthy", "leaf_hopper_jassids"): 2,
    ("leaf_hopper_jassids", "leaf_redding"): 2,
    ("leaf_redding", "bacterial_blight"): 2,
    ("leaf_redding", "curl_virus"): 1,
    ("leaf_redding", "leaf_hopper_jassids"): 1,
}

EXPECTED_TWO_DECIMALS = {
    "bacterial_blight": (0.96, 1.00, 0.98),
    "curl_virus": (0.99, 0.98, 0.98),
    "healthy": (1.00, 0.97, 0.98),
    "herbicide_growth_damage": (1.00, 1.00, 1.00),
    "leaf_hopper_jassids": (0.97, 0.98, 0.98),
    "leaf_redding": (0.97, 0.96, 0.96),
    "leaf_variegation": (1.00, 1.00, 1.00),
}


def reference_matrix() -> ConfusionMatrix:
    idx = {name: i for i, name in enumerate(CLASS_NAMES)}
    counts = np.zeros((7, 7), dtype=np.int64)
    for (t, p), n in ERRORS.items():
        counts[idx[t], idx[p]] = n
    for i in range(7):
        counts[i, i] = 100 - counts[i].sum()
    return ConfusionMatrix(counts, CLASS_NAMES)


class TestReferenceMatrix:
    def test_row_sums_and_trace(self):
        cm = reference_matrix()
        assert cm.counts.sum(axis=1).tolist() == [100] * 7
        assert cm.trace == 689
        assert cm.total == 700

    def test_reference_report_two_decimals(self):
        report = classification_report(reference_matrix())
        for row in report.rows:
            p, r, f1 = EXPECTED_TWO_DECIMALS[row.name]
            assert round(row.precision, 2) == p, row.name
            assert round(row.recall, 2) == r, row.name
            assert round(row.f1, 2) == f1, row.name
        assert abs(report.accuracy * 100 - 98.42) < 0.02
        assert not report.zero_division

    def test_accuracy_exact_fraction(self):
        assert reference_matrix().accuracy() == pytest.approx(689 / 700)


class TestConfusionMatrix:
    def test_hand_counts(self):
        cm = confusion_matrix([0, 0, 1, 2, 1], [0, 1, 1, 2, 1], 3)
        np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 2, 0], [0, 0, 1]])
        assert cm.accuracy() == pytest.approx(0.8)

    def test_identity_predictions(self):
        y = list(range(5)) * 3
        cm = confusion_matrix(y, y, 5)
        np.testing.assert_array_equal(cm.counts, np.eye(5, dtype=np.int64) * 3)
        assert cm.accuracy() == 1.0

    def test_single_sample(self):
        cm = confusion_matrix([2], [0], 3)
        assert cm.total == 1 and cm.trace == 0
        assert cm.accuracy() == 0.0

    def test_default_names(self):
        cm = confusion_matrix([0, 1], [0, 1], 2)
        assert cm.class_names == ["0", "1"]

    def test_range_validation(self):
        with pytest.raises(ValueError, match="true"):
            confusion_matrix([3], [0], 3)
        with pytest.raises(ValueError, match="predicted"):
            confusion_matrix([0], [-1], 3)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            confusion_matrix([0, 1], [0], 2)

    def test_name_count_validation(self):
        with pytest.raises(ValueError):
            confusion_matrix([0], [0], 2, class_names=["only_one"])

    def test_empty_matrix_has_no_accuracy(self):
        cm = confusion_matrix([], [], 2)
        with pytest.raises(ValueError):
            cm.accuracy()


class TestClassificationReport:
    def test_identity_is_all_ones(self):
        cm = confusion_matrix([0, 1, 2], [0, 1, 2], 3)
        report = classification_report(cm)
        for row in report.rows:
            assert row.precision == row.recall == row.f1 == 1.0
        assert report.accuracy == 1.0

    def test_zero_division_flag(self):
        # class 2 never appears: precision and recall both degenerate to 0
        cm = confusion_matrix([0, 1], [0, 1], 3)
        report = classification_report(cm)
        assert report.zero_division
        assert report.rows[2].precision == 0.0
        assert report.rows[2].f1 == 0.0

    def test_f1_between_precision_and_recall(self):
        cm = reference_matrix()
        for row in classification_report(cm).rows:
            lo, hi = sorted((row.precision, row.recall))
            assert lo - 1e-12 <= row.f1 <= hi + 1e-12

    def test_micro_recall_equals_accuracy(self):
        cm = reference_matrix()
        report = classification_report(cm)
        weights = cm.counts.sum(axis=1) / cm.total
        micro = sum(r.recall * w for r, w in zip(report.rows, weights))
        assert micro == pytest.approx(report.accuracy, rel=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        y_true = rng.integers(0, 4, 200)
        y_pred = rng.integers(0, 4, 200)
        base = classification_report(confusion_matrix(y_true, y_pred, 4))
        perm = [2, 0, 3, 1]
        remap = np.argsort(perm)
        permuted = classification_report(
            confusion_matrix(remap[y_true], remap[y_pred], 4))
        for c, row in enumerate(base.rows):
            assert permuted.rows[remap[c]].precision == pytest.approx(row.precision)
            assert permuted.rows[remap[c]].recall == pytest.approx(row.recall)

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            classification_report(confusion_matrix([], [], 2))


class TestBatchAccuracy:
    def test_hand_value(self):
        probs = np.array([[0.9, 0.1], [0.4, 0.6], [0.7, 0.3]], dtype=np.float32)
        onehot = np.array([[1, 0], [0, 1], [0, 1]], dtype=np.float32)
        assert batch_accuracy(probs, onehot) == pytest.approx(2 / 3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            batch_accuracy(np.zeros((2, 3)), np.zeros((2, 4)))


class TestWriters:
    def test_confusion_csv(self, tmp_path):
        cm = reference_matrix()
        path = str(tmp_path / "confusion.csv")
        write_confusion_csv(cm, path)
        lines = open(path).read().splitlines()
        assert lines[0] == "true\\predicted," + ",".join(CLASS_NAMES)
        assert len(lines) == 8
        assert lines[1].startswith("bacterial_blight,100,0,0,0,0,0,0")
        # row for leaf_redding carries its three off-diagonal errors
        assert lines[6] == "leaf_redding,2,1,0,0,1,96,0"

    def test_report_csv(self, tmp_path):
        report = classification_report(reference_matrix())
        path = str(tmp_path / "report.csv")
        write_report_csv(report, path)
        lines = open(path).read().splitlines()
        assert lines[0] == "class,precision,recall,f1"
        assert len(lines) == 9
        assert lines[1] == "bacterial_blight,0.961538,1.000000,0.980392"
        assert lines[-1] == "accuracy,0.984286,,"

    def test_heatmap_png(self, tmp_path):
        from PIL import Image
        path = str(tmp_path / "confusion.png")
        write_heatmap_png(reference_matrix(), path, cell=8)
        with Image.open(path) as im:
            assert im.size == (56, 56)
            arr = np.asarray(im)
        # diagonal cells are darkest, empty cells are white
        assert arr[0, 0] == arr.min()
        assert arr[0, 55] == 255
