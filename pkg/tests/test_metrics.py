import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iid.errors import ShapeMismatch
from iid.metrics import iou, mask_score, pixel_l1, pixel_l2


def test_iou_examples():
    a = np.array([[1, 1, 0, 0]], dtype=bool)
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    b = np.array([[1, 1, 1, 1]], dtype=bool)
    assert iou(a, b) == 0.5
    empty = np.zeros((2, 2), dtype=bool)
    assert iou(empty, empty) == 1.0
    with pytest.raises(ShapeMismatch):
        iou(a, empty)


def test_mask_score():
    pred = np.array([1, 1, 1, 0], dtype=bool)
    truth = np.array([1, 1, 0, 1], dtype=bool)
    s = mask_score(pred, truth)
    assert s.iou == 0.5
    assert s.precision == pytest.approx(2 / 3)
    assert s.recall == pytest.approx(2 / 3)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 5, 5)) > 0.5
    assert iou(a, b) == iou(b, a)
    assert 0 <= iou(a, b) <= 1
    assert (iou(a, b) == 1.0) == bool(np.array_equal(a, b))


def test_pixel_metrics_examples():
    a = np.random.default_rng(0).normal(size=(3, 3, 2))
    assert pixel_l1(a, a) == 0 and pixel_l2(a, a) == 0
    assert pixel_l1(a, a + 0.5) == pytest.approx(0.5)
    assert pixel_l2(a, a - 0.5) == pytest.approx(0.25)


def test_pixel_metrics_match_loop_oracle():
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(2, 4, 3, 2))
    diffs = [a[i, j, k] - b[i, j, k] for i in range(4) for j in range(3) for k in range(2)]
    assert pixel_l1(a, b) == pytest.approx(sum(abs(d) for d in diffs) / len(diffs), rel=1e-12)
    assert pixel_l2(a, b) == pytest.approx(sum(d * d for d in diffs) / len(diffs), rel=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_pixel_metrics_are_symmetric_and_nonnegative(seed):
    a, b = np.random.default_rng(seed).normal(size=(2, 3, 3, 1))
    for f in (pixel_l1, pixel_l2):
        assert f(a, b) == f(b, a) > 0
