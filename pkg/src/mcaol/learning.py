"""Convolutional analysis operator learning with a tight-frame constraint.

Training alternates an exact hard-thresholding step on the sparse codes
with a majorized proximal gradient step on the filters, projected back
onto the scaled tight-frame manifold after every update.  The joint
(multi-channel) variant couples the channels only through the
thresholding rule, which zeroes a pixel across all channels unless the
weighted energies clear a shared gate.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .conv import convolve_bank, filter_gradient, operator_norm_sq
from .types import ChannelPair, FilterBank, Image

__all__ = [
    "TrainConfig",
    "hard_threshold",
    "multi_hard_threshold",
    "project_tight_frame",
    "caol_train",
    "mcaol_train",
    "train_joint",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of filter training.

    `alpha` is the sparsity weight of single-channel training; `gammas`
    are the per-channel fidelity weights of joint training.  Stopping is
    on the relative change of the objective or `max_outer` iterations.
    """

    filter_size: int = 7
    filter_count: int = 49
    alpha: float = 0.01
    gammas: tuple = (800.0, 800.0)
    tol: float = 1e-4
    max_outer: int = 3000
    seed: int = 0
    extrapolate: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.filter_size <= 0 or self.filter_size % 2 == 0:
            raise ValueError("filter_size must be odd and positive")
        if self.filter_count < self.filter_size ** 2:
            raise ValueError("filter_count must be at least filter_size^2")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if any(g <= 0 for g in self.gammas):
            raise ValueError("gammas must be positive")
        if self.tol < 0 or self.max_outer <= 0:
            raise ValueError("tol must be >= 0 and max_outer positive")


def hard_threshold(a: np.ndarray, beta: float) -> np.ndarray:
    """Global minimizer of 0.5||a - z||^2 + beta ||z||_0.

    Keeps entry j iff 0.5 a_j^2 >= beta (the boundary is kept), zeroes it
    otherwise.  beta = 0 returns a unchanged.

    Raises:
        ValueError: negative threshold parameter.
    """
    if beta < 0:
        raise ValueError("threshold parameter must be nonnegative")
    a = np.asarray(a, dtype=np.float64)
    return np.where(0.5 * a * a >= beta, a, 0.0)


def multi_hard_threshold(arrays, gammas) -> list[np.ndarray]:
    """Jointly threshold E aligned arrays under the group-l0 penalty.

    Minimizes sum_e 0.5 gamma_e ||a_e - z_e||^2 + ||(z_1..z_E)||_{1,0},
    where the last term counts positions with any nonzero channel.  A
    position is kept in all channels iff sum_e 0.5 gamma_e a_{e}^2 >= 1,
    else zeroed in all channels.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if len(arrays) == 0:
        raise ValueError("need at least one channel")
    if len(gammas) != len(arrays):
        raise ValueError(f"{len(gammas)} gammas for {len(arrays)} channels")
    if any(g <= 0 for g in gammas):
        raise ValueError("gammas must be positive")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("channel arrays must share one shape")
    energy = np.zeros(shape)
    for g, a in zip(gammas, arrays):
        energy += 0.5 * g * a * a
    keep = energy >= 1.0
    return [np.where(keep, a, 0.0) for a in arrays]


def project_tight_frame(g: np.ndarray) -> np.ndarray:
    """Nearest P x K matrix M with M M^T = (1/P) I, in Frobenius norm.

    Computed as (1/sqrt(P)) U V^T from the thin SVD of g.  Rank-deficient
    inputs are completed along the SVD's remaining directions and flagged
    with a warning.

    Raises:
        ValueError: fewer columns than rows (constraint infeasible).
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {g.shape}")
    p, k = g.shape
    if k < p:
        raise ValueError(f"need at least {p} filters for {p} coefficients")
    u, s, vt = np.linalg.svd(g, full_matrices=False)
    if s[0] == 0.0 or s[-1] < 1e-12 * s[0]:
        warnings.warn("rank-deficient filter update; completing arbitrarily",
                      RuntimeWarning, stacklevel=2)
    return (u @ vt) / np.sqrt(p)


def _as_arrays(images) -> list[np.ndarray]:
    out = []
    for im in images:
        a = im.array if isinstance(im, Image) else np.asarray(im, dtype=np.float64)
        out.append(a.astype(np.float64, copy=False))
    return out


def _provenance(channels, cfg: TrainConfig) -> str:
    h = hashlib.sha256()
    for ch in channels:
        for a in ch:
            h.update(np.ascontiguousarray(a).tobytes())
    h.update(repr((cfg.filter_size, cfg.filter_count, cfg.alpha, cfg.gammas,
                   cfg.tol, cfg.max_outer, cfg.seed)).encode())
    return h.hexdigest()[:16]


def train_joint(channels, gammas, cfg: TrainConfig, callback=None,
                objective_scale: float = 1.0) -> tuple[list[np.ndarray], list[float]]:
    """Alternating minimization over sparse codes and E filter banks.

    `channels` is a list of E lists of training images (aligned across
    channels is not required for the math, only equal counts).  Returns
    the E filter matrices (P x K) and the objective trace, one value per
    outer iteration, recorded after each code update and scaled by
    `objective_scale`.  The trace is non-increasing when extrapolation
    is off.  `callback`, if given, is called after every filter update
    with a dict holding `iter`, `objective` and the post-update `banks`.

    Raises:
        ValueError: empty or all-zero training set.
    """
    e_count = len(channels)
    if e_count == 0 or any(len(ch) == 0 for ch in channels):
        raise ValueError("training set is empty")
    if len({len(ch) for ch in channels}) != 1:
        raise ValueError("channels must hold the same number of images")
    if len(gammas) != e_count:
        raise ValueError(f"{len(gammas)} gammas for {e_count} channels")
    size = cfg.filter_size
    p = size * size
    k = cfg.filter_count

    xs = [_as_arrays(ch) for ch in channels]
    if cfg.normalize:
        for e in range(e_count):
            peak = max(np.max(np.abs(a)) for a in xs[e])
            if peak == 0.0:
                raise ValueError("degenerate training set: a channel is all zero")
            xs[e] = [a / peak for a in xs[e]]

    majorizers = [operator_norm_sq(xs[e], size) for e in range(e_count)]

    rng = np.random.default_rng(cfg.seed)
    mats = [project_tight_frame(rng.standard_normal((p, k))) for _ in range(e_count)]
    prev_mats = [m.copy() for m in mats]

    def bank_of(m):
        return m.T.reshape(k, size, size)

    trace: list[float] = []
    n_images = len(xs[0])
    for t in range(cfg.max_outer):
        extrapolating = cfg.extrapolate and t > 0
        if extrapolating:
            w = (t - 1.0) / (t + 2.0)
            eval_mats = [m + w * (m - pm) for m, pm in zip(mats, prev_mats)]
        grads = [np.zeros((k, size, size)) for _ in range(e_count)]
        grads_ex = [np.zeros((k, size, size)) for _ in range(e_count)] if extrapolating else None
        quad = 0.0
        kept = 0
        for l in range(n_images):
            feats = [convolve_bank(bank_of(mats[e]), xs[e][l]) for e in range(e_count)]
            energy = np.zeros(feats[0].shape)
            for e in range(e_count):
                energy += 0.5 * gammas[e] * feats[e] * feats[e]
            keep = energy >= 1.0
            kept += int(np.count_nonzero(keep))
            for e in range(e_count):
                resid = np.where(keep, 0.0, feats[e])
                quad += 0.5 * gammas[e] * float(np.sum(resid * resid))
                grads[e] += filter_gradient(xs[e][l], resid, size)
                if extrapolating:
                    feats_ex = convolve_bank(bank_of(eval_mats[e]), xs[e][l])
                    z = np.where(keep, feats[e], 0.0)
                    grads_ex[e] += filter_gradient(xs[e][l], feats_ex - z, size)
        objective = objective_scale * (quad + kept)
        if extrapolating and trace and objective > trace[-1]:
            # momentum overshoot: fall back to the plain step this round
            extrapolating = False
        trace.append(objective)
        if len(trace) > 1:
            drop = abs(trace[-2] - trace[-1])
            if drop <= cfg.tol * max(abs(trace[-2]), 1e-300):
                break
        new_mats = []
        for e in range(e_count):
            if extrapolating:
                base, g = eval_mats[e], grads_ex[e]
            else:
                base, g = mats[e], grads[e]
            step = base - g.reshape(k, p).T / majorizers[e]
            new_mats.append(project_tight_frame(step))
        prev_mats = mats
        mats = new_mats
        if callback is not None:
            callback({"iter": t, "objective": objective,
                      "banks": [m.copy() for m in mats]})
    return mats, trace


def caol_train(images, cfg: TrainConfig, callback=None) -> FilterBank:
    """Learn one filter bank from single-channel training images.

    Minimizes sum_{l,k} 0.5 ||d_k (*) x_l - z_lk||^2 + alpha ||z_lk||_0
    subject to the tight-frame constraint, via the joint core with a
    single channel weighted 1/alpha.
    """
    xs = _as_arrays(images)
    mats, _ = train_joint([xs], (1.0 / cfg.alpha,), cfg, callback,
                          objective_scale=cfg.alpha)
    prov = _provenance([xs], cfg)
    return FilterBank(cfg.filter_size, cfg.filter_count,
                      mats[0].T.reshape(cfg.filter_count, cfg.filter_size, cfg.filter_size),
                      provenance=prov)


def mcaol_train(pairs, cfg: TrainConfig, callback=None) -> ChannelPair:
    """Learn coupled low/high filter banks from paired training images.

    `pairs` is a list of ChannelPair[Image] sharing one label pair.  The
    channels are trained jointly: codes are thresholded across channels
    under the shared gate, filters update per channel.
    """
    if not pairs:
        raise ValueError("training set is empty")
    labels = pairs[0].labels
    if any(pr.labels != labels for pr in pairs):
        raise ValueError("training pairs must share one label pair")
    channels = [_as_arrays([pr.low for pr in pairs]),
                _as_arrays([pr.high for pr in pairs])]
    mats, _ = train_joint(channels, cfg.gammas, cfg, callback)
    prov = _provenance(channels, cfg)
    k, s = cfg.filter_count, cfg.filter_size
    banks = [FilterBank(s, k, mats[e].T.reshape(k, s, s),
                        channel=str(labels[e]), provenance=prov)
             for e in range(2)]
    return ChannelPair(banks[0], banks[1], labels)
