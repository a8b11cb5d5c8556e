"""Zero-padded same-size 2D convolution and its adjoints.

All operators here are the linear maps built from a filter d and an image
x: `convolve` applies the (flipped-kernel) convolution matrix X to d or,
seen the other way, the matrix D to x; `convolve_adjoint` applies the
transpose in the image argument; `filter_gradient` applies the transpose
in the filter argument.  Everything is direct spatial arithmetic on
float64, so results are bit-reproducible run to run.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "convolve",
    "convolve_adjoint",
    "convolve_bank",
    "convolve_bank_adjoint",
    "filter_gradient",
    "operator_norm_sq",
]


def _check_filter(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"filter must be square 2D, got shape {d.shape}")
    if d.shape[0] % 2 == 0:
        raise ValueError("filter side length must be odd")
    return d

def _check_image(x: np.ndarray, size: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {x.shape}")
    if size > x.shape[0] or size > x.shape[1]:
        raise ValueError(f"{size}x{size} filter larger than {x.shape} image")
    return x


def _windows(x: np.ndarray, size: int) -> np.ndarray:
    """(H, W, size, size) view of the zero-padded image.

    Window (i, j) covers x[i+p-c, j+q-c] for p, q in [0, size), c the
    filter center, with zeros outside the grid.
    """
    c = size // 2
    xp = np.pad(x, c)
    return sliding_window_view(xp, (size, size))


def convolve(d: np.ndarray, x: np.ndarray) -> np.ndarray:
    """True 2D convolution of image x with filter d, same-size output.

    The image is zero padded so output pixel (i, j) is
    sum_{p,q} d[p, q] * x[i - p + c, j - q + c] with c the filter center.
    """
    d = _check_filter(d)
    x = _check_image(x, d.shape[0])
    w = _windows(x, d.shape[0])
    return np.tensordot(w, d[::-1, ::-1], axes=([2, 3], [0, 1]))


def convolve_adjoint(d: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Transpose of `convolve` in the image argument.

    Equals same-size zero-padded correlation with d, i.e. convolution
    with the flipped kernel.
    """
    d = _check_filter(d)
    r = _check_image(r, d.shape[0])
    w = _windows(r, d.shape[0])
    return np.tensordot(w, d, axes=([2, 3], [0, 1]))


def convolve_bank(bank: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Convolve one image with K filters at once; returns (K, H, W)."""
    bank = np.asarray(bank, dtype=np.float64)
    if bank.ndim != 3:
        raise ValueError(f"bank must be (K, s, s), got shape {bank.shape}")
    _check_filter(bank[0])
    x = _check_image(x, bank.shape[1])
    w = _windows(x, bank.shape[1])
    out = np.tensordot(w, bank[:, ::-1, ::-1], axes=([2, 3], [1, 2]))
    return np.ascontiguousarray(np.moveaxis(out, 2, 0))


def convolve_bank_adjoint(bank: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Sum of per-filter adjoints: sum_k convolve_adjoint(d_k, r_k).

    Contracts over filters first, then accumulates the s^2 shifted
    slices, so the cost is one small matrix product plus s^2 adds.
    """
    bank = np.asarray(bank, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3 or r.shape[0] != bank.shape[0]:
        raise ValueError(f"residual stack shape {r.shape} does not match bank")
    size = bank.shape[1]
    c = size // 2
    h, w = r.shape[1:]
    rp = np.pad(r, ((0, 0), (c, c), (c, c)))
    t = np.tensordot(bank, rp, axes=(0, 0))
    out = np.zeros((h, w))
    for p in range(size):
        for q in range(size):
            out += t[p, q, p:p + h, q:q + w]
    return out


def filter_gradient(x: np.ndarray, r: np.ndarray, size: int) -> np.ndarray:
    """Transpose of `convolve` in the filter argument, for K residuals.

    Given image x and residual maps r of shape (K, H, W), returns the
    (K, size, size) stack whose k-th slice is X^T r_k, the gradient of
    <convolve(d_k, x), r_k> with respect to d_k.
    """
    x = _check_image(x, size)
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 2:
        r = r[None]
    w = _windows(x, size)
    g = np.tensordot(r, w, axes=([1, 2], [0, 1]))
    return g[:, ::-1, ::-1]


def operator_norm_sq(images, filter_size: int, tol: float = 1e-4,
                     max_iter: int = 1000) -> float:
    """Upper bound on the largest eigenvalue of sum_l X_l^T X_l.

    X_l maps a filter to its convolution with training image l.  Power
    iteration from a fixed seed runs until the Rayleigh quotient changes
    by less than `tol` relatively, and the estimate is inflated by 1% so
    it majorizes the true largest eigenvalue.

    Raises:
        ValueError: the training images are all zero.
    """
    arrays = [np.asarray(getattr(im, "array", im), dtype=np.float64) for im in images]
    if not arrays:
        raise ValueError("need at least one training image")
    for a in arrays:
        _check_image(a, filter_size)
    wins = [_windows(a, filter_size) for a in arrays]

    def apply(d):
        acc = np.zeros_like(d)
        for w in wins:
            y = np.tensordot(w, d[::-1, ::-1], axes=([2, 3], [0, 1]))
            acc += np.einsum("ijpq,ij->pq", w, y)[::-1, ::-1]
        return acc

    rng = np.random.default_rng(0)
    v = rng.standard_normal((filter_size, filter_size))
    v /= np.linalg.norm(v)
    lam_prev = -np.inf
    for _ in range(max_iter):
        u = apply(v)
        lam = float(np.vdot(v, u))
        norm = np.linalg.norm(u)
        if norm == 0.0:
            raise ValueError("operator norm undefined: all-zero training set")
        if abs(lam - lam_prev) <= tol * abs(lam):
            break
        v = u / norm
        lam_prev = lam
    return lam * 1.01
