import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import subgrid_area, subgrid_iou
from salsign.geometry import Box, area, boxes_to_array, center_distance, iou, iou_matrix


def test_area_examples():
    assert area(Box(0, 0, 1, 1)) == 1.0
    assert area(Box(0, 0, 2, 2)) == 4.0
    b = (1.5, 2.0, 4.0, 5.5)
    assert area(Box(*b)) == 8.75
    assert subgrid_area(b, 1e-3) == pytest.approx(8.75, abs=1e-9)


def test_iou_examples():
    assert iou(Box(0, 0, 1, 1), Box(0, 0, 1, 1)) == 1.0
    assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0
    got = iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3))
    assert got == pytest.approx(1 / 7, abs=1e-15)
    assert subgrid_iou((0, 0, 2, 2), (1, 1, 3, 3), 0.01) == pytest.approx(1 / 7, abs=1e-12)


def test_center_distance_examples():
    b = Box(0, 0, 2, 2)
    assert center_distance(b, b) == 0.0
    assert center_distance(Box(-1, -1, 1, 1), Box(2, 3, 4, 5)) == 5.0
    got = center_distance(Box(0, 0, 2, 2), Box(1, 1, 3, 3))
    assert got == pytest.approx(1.414214, abs=1e-6)
    assert got == pytest.approx(np.linalg.norm(np.array([2.0, 2.0]) - np.array([1.0, 1.0])), rel=1e-15)


@pytest.mark.parametrize("coords", [(0, 0, 0, 1), (1, 0, 0, 1), (0, 0, float("nan"), 1), (0, 0, math.inf, 1)])
def test_degenerate_boxes_rejected(coords):
    with pytest.raises(ValueError):
        Box(*coords)


coord = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
side = st.floats(0.5, 50, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw):
    x, y = draw(coord), draw(coord)
    return Box(x, y, x + draw(side), y + draw(side))


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


@given(boxes(), boxes(), st.integers(-50, 50), st.integers(-50, 50))
def test_iou_translation_invariant(a, b, dx, dy):
    # integer shifts of dyadic-safe magnitudes keep arithmetic close; compare approximately
    assert iou(a.translate(dx, dy), b.translate(dx, dy)) == pytest.approx(iou(a, b), abs=1e-9)


@given(boxes(), boxes(), boxes())
def test_center_distance_is_a_metric(a, b, c):
    assert center_distance(a, b) == center_distance(b, a) >= 0.0
    assert center_distance(a, c) <= center_distance(a, b) + center_distance(b, c) + 1e-9


@given(st.lists(boxes(), min_size=1, max_size=6), st.lists(boxes(), min_size=1, max_size=6))
def test_iou_matrix_matches_scalar(xs, ys):
    m = iou_matrix(boxes_to_array(xs), boxes_to_array(ys))
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            assert m[i, j] == iou(a, b)


def test_iou_against_subgrid_oracle_on_integer_boxes():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = rng.integers(0, 10, 2)
        b = rng.integers(0, 10, 2)
        ba = (float(a[0]), float(a[1]), float(a[0] + rng.integers(1, 6)), float(a[1] + rng.integers(1, 6)))
        bb = (float(b[0]), float(b[1]), float(b[0] + rng.integers(1, 6)), float(b[1] + rng.integers(1, 6)))
        assert iou(Box(*ba), Box(*bb)) == pytest.approx(subgrid_iou(ba, bb, 0.25), abs=1e-12)
