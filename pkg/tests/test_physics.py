"""Counting model: means, sampling, likelihood values and gradients."""

import numpy as np
import pytest

from mcaol.physics import (MEAN_FLOOR, SourceModel, mean_counts,
                           poisson_nll, poisson_nll_grad,
                           poisson_nll_with_grad, pwls_transform,
                           pwls_with_grad, sample_poisson)
from mcaol.projector import ScanGeometry, build_system_matrix


@pytest.fixture(scope="module")
def sm():
    return build_system_matrix(ScanGeometry.parallel(8, 6), 8)


class TestSourceModel:
    def test_validation(self):
        with pytest.raises(ValueError):
            SourceModel(0.0, 1.0)
        with pytest.raises(ValueError):
            SourceModel(1e5, -1.0)
        SourceModel(1e5, 0.0)


class TestMeanCounts:
    def test_zero_image_gives_incident_plus_background(self, sm):
        src = SourceModel(1e5, 10.0)
        means = mean_counts(sm, np.zeros((8, 8)), src)
        np.testing.assert_allclose(means, 1e5 + 10.0)

    def test_attenuation_reduces_counts(self, sm):
        src = SourceModel(1e4, 0.0)
        means = mean_counts(sm, np.full((8, 8), 0.05), src)
        assert means.max() < 1e4
        assert means.min() > 0.0

    def test_negative_image_rejected(self, sm):
        x = np.zeros((8, 8))
        x[0, 0] = -1e-9
        with pytest.raises(ValueError, match="negative attenuation"):
            mean_counts(sm, x, SourceModel(1e5, 0.0))

    def test_floor_applied(self, sm):
        # absurd attenuation: exp underflows, the floor keeps means positive
        src = SourceModel(1e-300, 0.0)
        means = mean_counts(sm, np.full((8, 8), 50.0), src)
        assert means.min() >= MEAN_FLOOR


class TestSamplePoisson:
    def test_deterministic_given_seed(self):
        mean = np.full((5, 5), 40.0)
        a = sample_poisson(mean, 123)
        b = sample_poisson(mean, 123)
        np.testing.assert_array_equal(a, b)

    def test_generator_state_advances(self):
        rng = np.random.default_rng(0)
        mean = np.full((5, 5), 40.0)
        a = sample_poisson(mean, rng)
        b = sample_poisson(mean, rng)
        assert not np.array_equal(a, b)

    def test_integer_valued_float(self):
        out = sample_poisson(np.full(100, 7.5), 5)
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out, np.round(out))
        assert out.min() >= 0

    def test_mean_matches_law(self):
        out = sample_poisson(np.full(200_000, 25.0), 7)
        # CLT: sample mean within 6 sigma of 25
        assert abs(out.mean() - 25.0) < 6 * np.sqrt(25.0 / out.size)


class TestPoissonNll:
    def test_closed_form_value(self, sm):
        src = SourceModel(100.0, 0.0)
        x = np.zeros((8, 8))
        y = np.full(sm.sino_shape, 100.0)
        # every ray: mean 100, value = 100 - 100*log(100)
        want = y.size * (100.0 - 100.0 * np.log(100.0))
        val = poisson_nll(y, sm, x, src)
        assert val == pytest.approx(want, rel=1e-12)

    def test_minimized_at_truth_along_scaling(self, sm):
        src = SourceModel(1e4, 5.0)
        xt = np.full((8, 8), 0.02)
        y = mean_counts(sm, xt, src)  # noiseless data
        base = poisson_nll(y, sm, xt, src)
        for t in (0.8, 1.2):
            assert poisson_nll(y, sm, t * xt, src) > base

    def test_grad_matches_value_function(self, sm, rng):
        src = SourceModel(1e4, 10.0)
        x = 0.02 + 0.005 * rng.random((8, 8))
        y = np.round(mean_counts(sm, x, src))
        v1, g1 = poisson_nll_with_grad(y, sm, x, src)
        assert v1 == pytest.approx(poisson_nll(y, sm, x, src), rel=1e-14)
        np.testing.assert_array_equal(g1, poisson_nll_grad(y, sm, x, src))

    def test_grad_central_difference(self, sm, rng):
        src = SourceModel(1e4, 10.0)
        x = 0.02 + 0.01 * rng.random((8, 8))
        y = np.round(mean_counts(sm, 0.9 * x, src))
        g = poisson_nll_grad(y, sm, x, src)
        for idx in [(0, 0), (3, 4), (7, 7), (5, 2), (2, 6)]:
            # absolute step: the value is ~1e6, so a relative-to-x step
            # (~2e-8) would be dominated by cancellation roundoff
            h = 1e-6
            xp = x.copy()
            xp[idx] += h
            xm = x.copy()
            xm[idx] -= h
            want = (poisson_nll(y, sm, xp, src)
                    - poisson_nll(y, sm, xm, src)) / (2 * h)
            denom = max(1.0, abs(want))
            assert abs(g[idx] - want) / denom < 1e-5


class TestPwls:
    def test_transform_values(self):
        src = SourceModel(1000.0, 10.0)
        y = np.array([510.0, 11.0, 10.5, 0.0])
        l, w = pwls_transform(y, src)
        # 510 - 10 = 500 -> log(1000/500) = log 2
        assert l[0] == pytest.approx(np.log(2.0))
        assert w[0] == pytest.approx(500.0 ** 2 / 510.0)
        # yt = 1 exactly on the boundary is kept
        assert l[1] == pytest.approx(np.log(1000.0))
        assert w[1] == pytest.approx(1.0 / 11.0)
        # below the boundary: dropped
        assert l[2] == 0.0 and w[2] == 0.0
        assert l[3] == 0.0 and w[3] == 0.0

    def test_weight_denominator_clamped(self):
        src = SourceModel(100.0, 0.0)
        y = np.array([0.5])
        l, w = pwls_transform(y, src)
        assert l[0] == 0.0 and w[0] == 0.0

    def test_value_and_gradient(self, sm, rng):
        src = SourceModel(1e4, 10.0)
        xt = 0.02 + 0.01 * rng.random((8, 8))
        y = np.round(mean_counts(sm, xt, src))
        l, w = pwls_transform(y, src)
        x = 0.9 * xt
        v, g = pwls_with_grad(l, w, sm, x)
        proj = sm.apply(x)
        want = 0.5 * np.sum(w * (l - proj) ** 2)
        assert v == pytest.approx(want, rel=1e-12)
        for idx in [(1, 1), (4, 4), (6, 3)]:
            h = 1e-6
            xp = x.copy()
            xp[idx] += h
            xm = x.copy()
            xm[idx] -= h
            vp, _ = pwls_with_grad(l, w, sm, xp)
            vm, _ = pwls_with_grad(l, w, sm, xm)
            want = (vp - vm) / (2 * h)
            assert abs(g[idx] - want) / max(1.0, abs(want)) < 1e-5

    def test_noiseless_minimum_at_truth(self, sm):
        src = SourceModel(1e6, 0.0)
        xt = np.full((8, 8), 0.03)
        y = mean_counts(sm, xt, src)
        l, w = pwls_transform(y, src)
        v0, g0 = pwls_with_grad(l, w, sm, xt)
        assert v0 == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(g0, 0.0, atol=1e-8)
