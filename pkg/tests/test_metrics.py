import numpy as np
import pytest

from auxtabl import metrics
from auxtabl.errors import DomainException, ShapeException


def test_macro_metrics():
    cm = metrics.confusion_matrix([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0])
    assert cm.counts.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    m = metrics.metrics(cm)
    assert m.accuracy == pytest.approx(4 / 6)
    assert m.precision == pytest.approx((0.5 + 2 / 3 + 1) / 3)
    assert m.recall == pytest.approx((0.5 + 1 + 0.5) / 3)
    assert m.f1 == pytest.approx((0.5 + 0.8 + 2 / 3) / 3)


def test_empty_classes_count_as_zero():
    m = metrics.metrics(metrics.confusion_matrix([0, 1, 2], [0, 0, 0]))
    assert m.precision == pytest.approx(1 / 9)
    assert m.recall == pytest.approx(1 / 3)
    assert m.f1 == pytest.approx(1 / 6)
    empty = metrics.metrics(metrics.ConfusionMatrix(np.zeros((3, 3))))
    assert empty == metrics.Metrics(0.0, 0.0, 0.0, 0.0)


def test_win_rate():
    cm = metrics.confusion_matrix([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0])
    assert metrics.win_rate(cm) == pytest.approx(75.0)
    assert metrics.win_rate(metrics.confusion_matrix([1, 2], [0, 0])) is None


def test_matrices_add():
    a = metrics.confusion_matrix([0, 1], [0, 1])
    b = metrics.confusion_matrix([2], [1])
    total = a + b
    assert total.total == 3
    assert total == metrics.confusion_matrix([0, 1, 2], [0, 1, 1])
    assert total.rows()[2] == ['down', 0, 1, 0]


def test_bad_inputs():
    with pytest.raises(ShapeException):
        metrics.confusion_matrix([0, 1], [0])
    with pytest.raises(DomainException):
        metrics.confusion_matrix([0, 3], [0, 1])
    with pytest.raises(ShapeException):
        metrics.ConfusionMatrix(np.zeros((2, 2)))
