"""Penalties, reconstruction identities, and objective monotonicity."""

import numpy as np
import pytest

from mcaol.optim import SolverConfig
from mcaol.physics import SourceModel, mean_counts, sample_poisson
from mcaol.recon import (ReconConfig, caol_pwls_reconstruct, caol_reconstruct,
                         channel_objective, jtv_penalty, jtv_reconstruct,
                         mcaol_reconstruct, mle_reconstruct, tv_penalty,
                         tv_reconstruct)
from mcaol.types import ChannelPair

from conftest import synthetic_pairs


@pytest.fixture(scope="module")
def problem(small_sm):
    """One noisy 16x16 two-channel problem on the shared geometry."""
    pair = synthetic_pairs(1, 16, 42)[0]
    src = SourceModel(2e4, 5.0)
    rng = np.random.default_rng(7)
    ys = [sample_poisson(mean_counts(small_sm, img.array, src), rng)
          for img in (pair.low, pair.high)]
    return small_sm, pair, src, ys


def small_recon_cfg(**kw):
    base = dict(rhos=(1.0, 1.0), gammas=(1e5, 1e5), alpha=1e-5,
                n_outer=6, init_iters=20,
                inner=SolverConfig(max_iter=15))
    base.update(kw)
    return ReconConfig(**base)


class TestTvPenalty:
    def test_constant_image_smoothing_floor(self):
        """Flat image: every difference is zero, so each neighbor pair
        contributes its weight times sqrt(epsilon) and the gradient
        vanishes.  6x6 grid has 4 axial offsets with 30 pairs and 4
        diagonal offsets with 25 pairs."""
        v, g = tv_penalty(np.full((6, 6), 3.0), 1e-8)
        want = 1e-4 * (4 * 30 * 1.0 + 4 * 25 / np.sqrt(2.0))
        assert v == pytest.approx(want, rel=1e-12)
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_two_pixel_value(self):
        """1x2 grid: one horizontal pair counted once per pixel."""
        x = np.array([[0.0, 1.0]])
        eps = 1e-10
        v, _ = tv_penalty(x, eps)
        assert v == pytest.approx(2 * np.sqrt(1 + eps), rel=1e-12)

    def test_diagonal_weight(self):
        """2x2 grid with one hot pixel: two axial pairs at unit weight
        plus one diagonal pair at 1/sqrt(2), each counted twice."""
        x = np.array([[1.0, 0.0], [0.0, 0.0]])
        eps = 1e-12
        v, _ = tv_penalty(x, eps)
        want = 2 * (2 * 1.0 + 1 / np.sqrt(2.0))
        # zero-difference pairs only add O(sqrt(eps))
        assert v == pytest.approx(want, rel=1e-5)

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            tv_penalty(np.zeros((4, 4)), 0.0)

    def test_gradient_central_difference(self, rng):
        x = rng.random((7, 7))
        eps = 1e-6
        v, g = tv_penalty(x, eps)
        for idx in [(0, 0), (3, 3), (6, 2), (2, 6), (6, 6)]:
            h = 1e-7
            xp = x.copy()
            xp[idx] += h
            xm = x.copy()
            xm[idx] -= h
            want = (tv_penalty(xp, eps)[0] - tv_penalty(xm, eps)[0]) / (2 * h)
            assert abs(g[idx] - want) / max(1.0, abs(want)) < 1e-5


class TestJtvPenalty:
    def test_reduces_to_tv_with_zero_channel(self, rng):
        x = rng.random((6, 6))
        eps = 1e-8
        jv, jg1, jg2 = jtv_penalty(x, np.zeros_like(x), eps)
        tv, tg = tv_penalty(x, eps)
        assert jv == tv
        np.testing.assert_array_equal(jg1, tg)

    def test_symmetric_in_channels(self, rng):
        x1, x2 = rng.random((5, 5)), rng.random((5, 5))
        v12, g1, g2 = jtv_penalty(x1, x2, 1e-8)
        v21, h2, h1 = jtv_penalty(x2, x1, 1e-8)
        assert v12 == pytest.approx(v21, rel=1e-14)
        np.testing.assert_allclose(g1, h1, atol=1e-14)

    def test_coupling_below_sum(self, rng):
        """Joint root couples the channels: never more than the sum of
        the separate penalties."""
        x1, x2 = rng.random((6, 6)), rng.random((6, 6))
        eps = 1e-9
        jv = jtv_penalty(x1, x2, eps)[0]
        sep = tv_penalty(x1, eps)[0] + tv_penalty(x2, eps)[0]
        assert jv <= sep + 1e-12

    def test_gradient_central_difference(self, rng):
        x1, x2 = rng.random((6, 6)), rng.random((6, 6))
        eps = 1e-6
        _, g1, g2 = jtv_penalty(x1, x2, eps)
        for idx in [(0, 0), (2, 4), (5, 5)]:
            h = 1e-7
            for which, g in ((0, g1), (1, g2)):
                xs = [x1.copy(), x2.copy()]
                xs[which][idx] += h
                vp = jtv_penalty(xs[0], xs[1], eps)[0]
                xs = [x1.copy(), x2.copy()]
                xs[which][idx] -= h
                vm = jtv_penalty(xs[0], xs[1], eps)[0]
                want = (vp - vm) / (2 * h)
                assert abs(g[idx] - want) / max(1.0, abs(want)) < 1e-5


class TestChannelObjective:
    def test_gradient_central_difference(self, problem, tiny_banks, rng):
        sm, pair, src, ys = problem
        from mcaol.conv import convolve_bank
        from mcaol.learning import multi_hard_threshold
        bank = tiny_banks.low
        x = 0.8 * pair.low.array + 0.001
        f = convolve_bank(bank.values, x)
        z = multi_hard_threshold([f], (1e5,))[0]
        phi = channel_objective(ys[0], sm, src, bank, z, rho=2.0, gamma=1e5)
        v, g = phi(x)
        for idx in [(1, 1), (8, 8), (14, 3)]:
            # objective values are ~1e5, so keep h large enough that
            # central-difference roundoff stays below the tolerance
            h = 1e-6
            xp = x.copy()
            xp[idx] += h
            xm = x.copy()
            xm[idx] -= h
            want = (phi(xp)[0] - phi(xm)[0]) / (2 * h)
            assert abs(g[idx] - want) / max(1.0, abs(want)) < 1e-5


class TestReductions:
    def test_tv_zero_beta_equals_mle(self, problem):
        sm, pair, src, ys = problem
        cfg = small_recon_cfg()
        a = tv_reconstruct(ys[0], sm, src, cfg, rho=1.0, beta=0.0)
        b = mle_reconstruct(ys[0], sm, src, cfg)
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_mcaol_single_channel_matches_caol(self, problem, tiny_banks):
        """Joint solver with one channel reproduces the uncoupled prior:
        same images bitwise, same code supports under both threshold
        rules."""
        sm, pair, src, ys = problem
        from mcaol.conv import convolve_bank
        from mcaol.learning import hard_threshold, multi_hard_threshold
        from mcaol.recon import joint_reconstruct

        cfg = small_recon_cfg(n_outer=4)
        bank = tiny_banks.low
        x_caol = np.asarray(caol_reconstruct(ys[0], sm, src, bank, cfg,
                                             rho=1.0))
        xs, _ = joint_reconstruct([ys[0]], sm, [src], [bank],
                                  (1.0,), (1.0 / cfg.alpha,),
                                  cfg, "poisson")
        np.testing.assert_array_equal(xs[0], x_caol)
        feats = convolve_bank(bank.values, x_caol)
        za = hard_threshold(feats, cfg.alpha)
        zb = multi_hard_threshold([feats], (1.0 / cfg.alpha,))[0]
        np.testing.assert_array_equal(za != 0, zb != 0)

    def test_jtv_identical_channels_agree(self, problem):
        """With identical data on both channels nothing breaks the
        symmetry, so the joint solve returns matching images."""
        sm, pair, src, ys = problem
        cfg = small_recon_cfg(inner=SolverConfig(max_iter=40))
        xs = jtv_reconstruct([ys[0], ys[0]], sm, [src, src], cfg, beta=1.0)
        assert np.asarray(xs[0]).shape == (16, 16)
        np.testing.assert_allclose(np.asarray(xs[0]), np.asarray(xs[1]),
                                   atol=1e-10)


class TestMonotonicity:
    def test_joint_trace_non_increasing_per_half_step(self, problem,
                                                      tiny_banks):
        sm, pair, src, ys = problem
        cfg = small_recon_cfg(n_outer=8)
        seen = []
        mcaol_reconstruct(list(ys), sm, [src, src],
                          [tiny_banks.low, tiny_banks.high], cfg,
                          callback=lambda info: seen.append(info))
        assert len(seen) == 2 * cfg.n_outer
        objs = [s["objective"] for s in seen]
        for a, b in zip(objs, objs[1:]):
            assert b <= a + 1e-6 * abs(a)
        phases = [s["phase"] for s in seen]
        assert phases[:2] == ["codes", "images"]

    def test_caol_trace_non_increasing(self, problem, tiny_banks):
        sm, pair, src, ys = problem
        cfg = small_recon_cfg(n_outer=6)
        objs = []
        caol_reconstruct(ys[0], sm, src, tiny_banks.low, cfg, rho=1.0,
                         callback=lambda info: objs.append(info["objective"]))
        for a, b in zip(objs, objs[1:]):
            assert b <= a + 1e-6 * abs(a)


class TestExchangeability:
    def test_channel_swap_symmetry(self, problem, tiny_banks):
        """Swapping the channels swaps the outputs; nothing in the joint
        solver privileges either channel."""
        sm, pair, src, ys = problem
        cfg = small_recon_cfg(n_outer=3)
        banks = [tiny_banks.low, tiny_banks.high]
        xs = mcaol_reconstruct(list(ys), sm, [src, src], banks, cfg)
        swapped = mcaol_reconstruct([ys[1], ys[0]], sm, [src, src],
                                    [banks[1], banks[0]], cfg)
        np.testing.assert_array_equal(np.asarray(xs[0]),
                                      np.asarray(swapped[1]))
        np.testing.assert_array_equal(np.asarray(xs[1]),
                                      np.asarray(swapped[0]))


class TestOutputTypes:
    def test_channel_pair_in_pair_out(self, problem, tiny_banks):
        sm, pair, src, ys = problem
        from mcaol.types import Sinogram
        sinos = ChannelPair(
            Sinogram(16, sm.geometry.angles, ys[0], "counts", 60.0),
            Sinogram(16, sm.geometry.angles, ys[1], "counts", 120.0))
        cfg = small_recon_cfg(n_outer=2)
        out = mcaol_reconstruct(sinos, sm, ChannelPair(src, src),
                                tiny_banks, cfg)
        assert isinstance(out, ChannelPair)
        assert out.low.energy == 60.0
        assert out.low.array.shape == (16, 16)

    def test_pwls_variant_runs(self, problem, tiny_banks):
        sm, pair, src, ys = problem
        cfg = small_recon_cfg(n_outer=3)
        x = caol_pwls_reconstruct(ys[0], sm, src, tiny_banks.low, cfg,
                                  rho=1.0)
        assert np.asarray(x).shape == (16, 16)
        assert np.asarray(x).min() >= 0.0


class TestNonnegativity:
    def test_all_methods_nonnegative(self, problem, tiny_banks):
        sm, pair, src, ys = problem
        cfg = small_recon_cfg(n_outer=2)
        outs = [
            mle_reconstruct(ys[0], sm, src, cfg),
            tv_reconstruct(ys[0], sm, src, cfg, rho=1.0, beta=10.0),
            caol_reconstruct(ys[0], sm, src, tiny_banks.low, cfg, rho=1.0),
        ]
        outs += list(mcaol_reconstruct(list(ys), sm, [src, src],
                                       [tiny_banks.low, tiny_banks.high],
                                       cfg))
        for x in outs:
            assert np.asarray(x).min() >= 0.0
