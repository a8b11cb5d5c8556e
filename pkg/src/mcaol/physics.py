"""Photon statistics of the transmission measurement.

The detector at ray i of energy channel e sees Poisson counts with mean
S * exp(-[Ax]_i) + eta, where S is the incident photon count, A the ray
tracing matrix, x the attenuation image and eta a known background.
The negative log likelihood is minimized, so smaller is better.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projector import SystemMatrix
from .types import Image

__all__ = [
    "SourceModel",
    "MEAN_FLOOR",
    "mean_counts",
    "sample_poisson",
    "poisson_nll",
    "poisson_nll_grad",
    "poisson_nll_with_grad",
    "pwls_transform",
    "pwls_with_grad",
]

MEAN_FLOOR = 1e-12


@dataclass(frozen=True)
class SourceModel:
    """Incident photon count and constant background per ray."""

    incident: float
    background: float = 0.0

    def __post_init__(self):
        if self.incident <= 0:
            raise ValueError("incident photon count must be positive")
        if self.background < 0:
            raise ValueError("background must be nonnegative")


def _as_array(x) -> np.ndarray:
    if isinstance(x, Image):
        return x.array
    return np.asarray(x, dtype=np.float64)


def mean_counts(sm: SystemMatrix, x, src: SourceModel) -> np.ndarray:
    """Expected counts per ray, clamped below at MEAN_FLOOR.

    Raises:
        ValueError: negative attenuation input.
    """
    xa = _as_array(x)
    if np.any(xa < 0):
        raise ValueError("negative attenuation input")
    proj = sm.apply(xa)
    return np.maximum(src.incident * np.exp(-proj) + src.background, MEAN_FLOOR)


def sample_poisson(mean: np.ndarray, seed) -> np.ndarray:
    """Poisson draw at the given means, returned integer-valued float64.

    `seed` may be an int or a numpy Generator; the same seed yields the
    same counts.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if np.any(mean < 0):
        raise ValueError("Poisson means must be nonnegative")
    rng = np.random.default_rng(seed)
    return rng.poisson(mean).astype(np.float64)


def _check_counts(y: np.ndarray, shape) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != shape:
        raise ValueError(f"count shape {y.shape}, expected {shape}")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("counts must be finite and nonnegative")
    return y


def poisson_nll_with_grad(y, sm: SystemMatrix, x, src: SourceModel):
    """Negative Poisson log likelihood and its gradient in x.

    Value is sum_i [ybar_i - y_i log ybar_i] up to the y-only constant;
    gradient is A^T g with g_i = (y_i / ybar_i - 1) * S * exp(-[Ax]_i).
    """
    xa = _as_array(x)
    if np.any(xa < 0):
        raise ValueError("negative attenuation input")
    y = _check_counts(y, (sm.geometry.detectors, sm.geometry.n_angles))
    proj = sm.apply(xa)
    surv = src.incident * np.exp(-proj)
    ybar = np.maximum(surv + src.background, MEAN_FLOOR)
    value = float(np.sum(ybar - y * np.log(ybar)))
    g = (y / ybar - 1.0) * surv
    return value, sm.apply_adjoint(g)


def poisson_nll(y, sm: SystemMatrix, x, src: SourceModel) -> float:
    value, _ = poisson_nll_with_grad(y, sm, x, src)
    return value


def poisson_nll_grad(y, sm: SystemMatrix, x, src: SourceModel) -> np.ndarray:
    _, grad = poisson_nll_with_grad(y, sm, x, src)
    return grad


def pwls_transform(y, src: SourceModel):
    """Linearized sinogram and statistical weights for the quadratic model.

    With ytilde = y - background, rays with ytilde >= 1 get
    l = log(S / ytilde) and w = ytilde^2 / max(y, 1); starved rays get
    l = 0, w = 0 so they drop from the fit.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("counts must be finite and nonnegative")
    yt = y - src.background
    ok = yt >= 1.0
    l = np.zeros_like(y)
    w = np.zeros_like(y)
    l[ok] = np.log(src.incident / yt[ok])
    w[ok] = yt[ok] ** 2 / np.maximum(y[ok], 1.0)
    return l, w


def pwls_with_grad(l, w, sm: SystemMatrix, x):
    """Weighted least squares data term 0.5 sum_i w_i (l_i - [Ax]_i)^2."""
    xa = _as_array(x)
    resid = sm.apply(xa) - l
    value = 0.5 * float(np.sum(w * resid * resid))
    return value, sm.apply_adjoint(w * resid)
