"""Box, area, and IoU against exact rational arithmetic."""

import numpy as np
import pytest

from querynms import Box, area, boxes_to_array, iou, pairwise_iou

from oracles import iou_fraction, random_boxes


class TestBox:
    def test_fields(self):
        b = Box(1.0, 2.0, 3.0, 5.0)
        assert b.as_tuple() == (1.0, 2.0, 3.0, 5.0)

    def test_zero_extent_allowed(self):
        Box(5.0, 5.0, 5.0, 9.0)

    def test_negative_extent_rejected(self):
        with pytest.raises(ValueError):
            Box(3.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            Box(0.0, 3.0, 1.0, 1.0)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            Box(0.0, 0.0, bad, 1.0)


class TestArea:
    def test_square(self):
        assert area(Box(0.0, 0.0, 2.0, 2.0)) == 4.0

    def test_zero_width(self):
        assert area(Box(5.0, 5.0, 5.0, 9.0)) == 0.0

    def test_fractional(self):
        # 3 * 1.5, exact in binary floating point
        assert area(Box(0.0, 0.0, 3.0, 1.5)) == 4.5


class TestIou:
    def test_identical(self):
        b = Box(1.0, 1.0, 4.0, 5.0)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0.0, 0.0, 1.0, 1.0), Box(2.0, 2.0, 3.0, 3.0)) == 0.0

    def test_touching_edges(self):
        assert iou(Box(0.0, 0.0, 1.0, 1.0), Box(1.0, 0.0, 2.0, 1.0)) == 0.0

    def test_one_seventh(self):
        # intersection 1, union 4 + 4 - 1 = 7
        got = iou(Box(0.0, 0.0, 2.0, 2.0), Box(1.0, 1.0, 3.0, 3.0))
        assert got == pytest.approx(1.0 / 7.0, rel=1e-15)

    def test_degenerate_pair_is_zero(self):
        a = Box(1.0, 1.0, 1.0, 1.0)
        assert iou(a, a) == 0.0

    def test_matches_exact_arithmetic(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            a, b = random_boxes(rng, 2)
            exact = float(iou_fraction(a.as_tuple(), b.as_tuple()))
            assert iou(a, b) == pytest.approx(exact, rel=1e-12, abs=1e-15)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            a, b = random_boxes(rng, 2)
            ab = iou(a, b)
            assert ab == iou(b, a)
            assert 0.0 <= ab <= 1.0

    def test_translation_and_scale_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b = random_boxes(rng, 2)
            base = iou(a, b)
            dx, dy = rng.uniform(-50.0, 50.0, size=2)
            k = float(rng.uniform(0.1, 10.0))
            moved = iou(
                Box(a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy),
                Box(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy),
            )
            scaled = iou(
                Box(k * a.x1, k * a.y1, k * a.x2, k * a.y2),
                Box(k * b.x1, k * b.y1, k * b.x2, k * b.y2),
            )
            assert moved == pytest.approx(base, rel=1e-12, abs=1e-12)
            assert scaled == pytest.approx(base, rel=1e-12, abs=1e-12)


class TestPairwiseIou:
    def test_matches_scalar_bitwise(self):
        rng = np.random.default_rng(3)
        boxes_a = random_boxes(rng, 12)
        boxes_b = random_boxes(rng, 9)
        mat = pairwise_iou(boxes_to_array(boxes_a), boxes_to_array(boxes_b))
        assert mat.shape == (12, 9)
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                # same formula arrangement, so equality is exact
                assert mat[i, j] == iou(a, b)

    def test_empty(self):
        mat = pairwise_iou(np.zeros((0, 4)), boxes_to_array(random_boxes(np.random.default_rng(0), 3)))
        assert mat.shape == (0, 3)
