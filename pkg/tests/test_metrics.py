import math

import numpy as np
import pytest

from evaluation.metrics import (
    ConfusionMatrix,
    accumulate,
    compare_runs,
    format_comparison,
    format_table,
    metrics,
    metrics_csv,
)
from utils.errors import ConfigError, DataError, DomainError

CLASSES = ("asphalt", "building", "grass", "agricultural")


def test_two_class_oracle():
    result = metrics(ConfusionMatrix("base", ("a", "b"), [[50, 10], [5, 35]]))
    np.testing.assert_allclose(result.completeness, [50 / 60, 35 / 40], atol=1e-9)
    np.testing.assert_allclose(result.correctness, [50 / 55, 35 / 45], atol=1e-9)
    assert result.completeness[0] == pytest.approx(0.8333, abs=1e-4)
    assert result.correctness[1] == pytest.approx(0.7778, abs=1e-4)
    assert result.overall_accuracy == pytest.approx(0.85, abs=1e-9)
    assert result.n_sites == 100


def test_perfect_and_undefined_classes():
    perfect = metrics(ConfusionMatrix("occlusion", ("void", "tree", "car"), np.diag([10, 5, 0])))
    assert perfect.overall_accuracy == 1.0
    np.testing.assert_array_equal(perfect.completeness[:2], [1.0, 1.0])
    assert math.isnan(perfect.completeness[2])
    assert math.isnan(perfect.correctness[2])


def test_empty_matrix():
    with pytest.raises(DataError):
        metrics(ConfusionMatrix("base", CLASSES))


def test_accumulate_counts_pairs():
    cm = ConfusionMatrix("base", ("a", "b", "c"))
    reference = np.array([[0, 1], [2, 2]])
    predicted = np.array([[0, 2], [2, 1]])
    updated = accumulate(cm, reference, predicted)
    np.testing.assert_array_equal(updated.counts, [[1, 0, 0], [0, 0, 1], [0, 1, 1]])
    assert cm.total == 0
    masked = accumulate(updated, reference, predicted, mask=[[True, False], [False, False]])
    assert masked.counts[0, 0] == 2
    assert masked.total == 5


def test_accumulate_errors():
    cm = ConfusionMatrix("base", ("a", "b"))
    with pytest.raises(DomainError):
        accumulate(cm, np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DomainError):
        accumulate(cm, [[0, 2]], [[0, 1]])
    with pytest.raises(DomainError):
        accumulate(cm, [[0, 1]], [[0, 1]], mask=[True])


def test_matrix_addition():
    a = ConfusionMatrix("base", ("a", "b"), [[1, 2], [3, 4]])
    b = ConfusionMatrix("base", ("a", "b"), [[1, 0], [0, 1]])
    np.testing.assert_array_equal((a + b).counts, [[2, 2], [3, 5]])
    with pytest.raises(ConfigError):
        a + ConfusionMatrix("occlusion", ("a", "b"))


def table_like(correct_fraction, n=1500):
    """Four-class matrix with ``correct_fraction`` of each row on the diagonal."""
    on = int(round(n * correct_fraction))
    counts = np.full((4, 4), (n - on) // 3)
    np.fill_diagonal(counts, on)
    return ConfusionMatrix("base", CLASSES, counts)


def test_comparison_deltas():
    crf, tcrf = table_like(0.826), table_like(0.866)
    comparison = compare_runs(crf, tcrf)
    assert comparison.oa_delta == pytest.approx(metrics(tcrf).overall_accuracy - metrics(crf).overall_accuracy)
    assert comparison.oa_delta > 0.03
    assert comparison.verdict["OA"] == "b"
    assert comparison.verdict["grass.Cm"] == "b"
    assert compare_runs(tcrf, crf).verdict["OA"] == "a"
    assert compare_runs(crf, crf).verdict["building.Cr"] == "tie"


def test_comparison_needs_same_classes():
    with pytest.raises(ConfigError):
        compare_runs(table_like(0.8), ConfusionMatrix("base", ("a", "b", "c", "d"), np.eye(4)))


def test_text_reports():
    crf, tcrf = metrics(table_like(0.826)), metrics(table_like(0.866))
    table = format_table([crf, tcrf], ["crf", "tcrf"])
    assert table.splitlines()[0] == "Layer: base"
    assert "agricultural" in table
    assert table.splitlines()[-1].split() == ["OA", "82.6", "86.6"]

    comparison = format_comparison(compare_runs(table_like(0.826), table_like(0.866)))
    assert comparison.splitlines()[-1].split()[:2] == ["OA", "+4.0"]
    assert comparison.endswith("winner: b")


def test_metrics_csv():
    result = metrics(ConfusionMatrix("occlusion", ("void", "tree", "car"), np.diag([3, 1, 0])))
    lines = metrics_csv([result]).splitlines()
    assert lines[0] == "layer,class,completeness,correctness"
    assert lines[1] == "occlusion,void,1.0,1.0"
    assert lines[3] == "occlusion,car,nan,nan"
    assert lines[4] == "occlusion,OA,1.0,"
