"""Replicate error metrics against loop-based oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mcaol.metrics import abs_bias, nrmse, std_metric, support_region
from mcaol.types import Image


def naive_abs_bias(recons, gt, region):
    """Pooled mean of |x - gt| over replicates and region pixels."""
    total, count = 0.0, 0
    for rec in recons:
        for i in range(gt.shape[0]):
            for j in range(gt.shape[1]):
                if region[i, j]:
                    total += abs(rec[i, j] - gt[i, j])
                    count += 1
    return total / count


def naive_std(recons, region):
    """Mean over region pixels of the population std across replicates."""
    n = len(recons)
    vals = []
    for i in range(recons[0].shape[0]):
        for j in range(recons[0].shape[1]):
            if region[i, j]:
                samples = [rec[i, j] for rec in recons]
                mu = sum(samples) / n
                vals.append(np.sqrt(sum((s - mu) ** 2 for s in samples) / n))
    return sum(vals) / len(vals)


class TestSupportRegion:
    def test_strictly_positive(self):
        gt = np.array([[0.0, 1e-12], [-1.0, 2.0]])
        np.testing.assert_array_equal(support_region(gt),
                                      [[False, True], [False, True]])

    def test_accepts_image(self):
        img = Image.from_array(np.array([[0.0, 0.5], [0.1, 0.0]]), 1.0)
        assert support_region(img).sum() == 2


class TestAbsBias:
    def test_matches_naive(self, rng):
        gt = rng.random((6, 6))
        recons = [gt + 0.1 * rng.standard_normal((6, 6)) for _ in range(4)]
        region = rng.random((6, 6)) > 0.4
        got = abs_bias(recons, gt, region)
        assert got == pytest.approx(naive_abs_bias(recons, gt, region),
                                    rel=1e-12)

    def test_default_region_is_support(self, rng):
        gt = np.zeros((5, 5))
        gt[1:4, 1:4] = 1.0
        recons = [gt + 0.5]
        # background error (0.5 everywhere) must not dilute the score
        assert abs_bias(recons, gt) == pytest.approx(0.5)

    def test_exact_recovery_zero(self, rng):
        gt = rng.random((4, 4)) + 0.1
        assert abs_bias([gt.copy(), gt.copy()], gt) == 0.0

    def test_replicate_order_invariant(self, rng):
        gt = rng.random((4, 4)) + 0.1
        recs = [rng.random((4, 4)) for _ in range(3)]
        assert abs_bias(recs, gt) == abs_bias(recs[::-1], gt)

    def test_scale_equivariant(self, rng):
        gt = rng.random((4, 4)) + 0.1
        recs = [rng.random((4, 4)) for _ in range(3)]
        assert abs_bias([3.0 * r for r in recs], 3.0 * gt) == pytest.approx(
            3.0 * abs_bias(recs, gt), rel=1e-12)

    def test_accepts_images(self, rng):
        gt = rng.random((4, 4)) + 0.1
        recs = [Image.from_array(gt + 0.25, 1.0), gt + 0.25]
        assert abs_bias(recs, Image.from_array(gt, 1.0)) == pytest.approx(0.25)

    def test_validation(self, rng):
        gt = np.ones((4, 4))
        with pytest.raises(ValueError, match="at least one replicate"):
            abs_bias([], gt)
        with pytest.raises(ValueError, match="shapes differ"):
            abs_bias([np.ones((4, 4)), np.ones((3, 3))], gt)
        with pytest.raises(ValueError, match="ground truth shape"):
            abs_bias([np.ones((3, 3))], gt)
        with pytest.raises(ValueError, match="empty region"):
            abs_bias([gt], np.zeros((4, 4)))
        with pytest.raises(ValueError, match="region shape"):
            abs_bias([gt], gt, np.ones((2, 2), dtype=bool))


class TestStdMetric:
    def test_matches_naive(self, rng):
        recs = [rng.random((5, 5)) for _ in range(5)]
        region = rng.random((5, 5)) > 0.3
        got = std_metric(recs, region=region)
        assert got == pytest.approx(naive_std(recs, region), rel=1e-12)

    def test_single_replicate_zero(self, rng):
        x = rng.random((4, 4))
        assert std_metric([x], region=np.ones((4, 4), dtype=bool)) == 0.0

    def test_shift_invariant(self, rng):
        recs = [rng.random((4, 4)) for _ in range(4)]
        region = np.ones((4, 4), dtype=bool)
        shifted = [r + 7.5 for r in recs]
        assert std_metric(shifted, region=region) == pytest.approx(
            std_metric(recs, region=region), rel=1e-12)

    def test_known_two_replicates(self):
        """Two replicates differing by 2d have per-pixel std d."""
        a = np.zeros((3, 3))
        b = np.full((3, 3), 0.4)
        assert std_metric([a, b], region=np.ones((3, 3), bool)) == (
            pytest.approx(0.2))

    def test_region_from_gt(self, rng):
        gt = np.zeros((4, 4))
        gt[0, 0] = 1.0
        recs = [np.full((4, 4), float(k)) for k in range(3)]
        want = float(np.std([0.0, 1.0, 2.0]))
        assert std_metric(recs, gt=gt) == pytest.approx(want)

    def test_needs_region_or_gt(self, rng):
        with pytest.raises(ValueError, match="need gt or an explicit region"):
            std_metric([rng.random((3, 3))])


class TestNrmse:
    def test_exact_zero(self, rng):
        x = rng.random((4, 4))
        assert nrmse(x, x) == 0.0

    def test_known_value(self):
        ref = np.array([[3.0, 4.0]])
        assert nrmse(np.array([[3.0, 5.0]]), ref) == pytest.approx(0.2)

    def test_zero_reference(self):
        with pytest.raises(ValueError, match="all zero"):
            nrmse(np.ones((2, 2)), np.zeros((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            nrmse(np.ones((2, 2)), np.ones((3, 3)))


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (3, 4, 4),
                  elements=st.floats(-10, 10, allow_nan=False)))
def test_bias_bounds_hold(stack):
    """AbsBias is nonnegative and bounded by the max pixel error."""
    gt = np.ones((4, 4))
    region = np.ones((4, 4), dtype=bool)
    recs = list(stack)
    bias = abs_bias(recs, gt, region)
    assert 0.0 <= bias <= float(np.max(np.abs(stack - gt))) + 1e-12


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (4, 3, 3),
                  elements=st.floats(-10, 10, allow_nan=False)))
def test_std_bounds_hold(stack):
    """STD is nonnegative and bounded by half the max pixel range."""
    region = np.ones((3, 3), dtype=bool)
    got = std_metric(list(stack), region=region)
    spread = float(np.max(stack.max(axis=0) - stack.min(axis=0)))
    assert 0.0 <= got <= 0.5 * spread + 1e-12
