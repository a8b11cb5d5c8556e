"""Replicate-study error metrics: absolute bias and ensemble STD.

Both metrics are averaged over a pixel region, by default the strictly
positive support of the ground truth, so background pixels outside the
object do not dilute the scores.
"""

from __future__ import annotations

import numpy as np

from .types import Image

__all__ = ["support_region", "abs_bias", "std_metric", "nrmse"]


def _to_array(x) -> np.ndarray:
    return x.array if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def _stack(recons) -> np.ndarray:
    arrs = [_to_array(r) for r in recons]
    if not arrs:
        raise ValueError("need at least one replicate")
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ValueError("replicate shapes differ")
    return np.stack(arrs)


def support_region(gt) -> np.ndarray:
    """Boolean mask of strictly positive ground-truth pixels."""
    return _to_array(gt) > 0


def _resolve_region(region, gt, shape) -> np.ndarray:
    mask = support_region(gt) if region is None else np.asarray(region, dtype=bool)
    if mask.shape != shape:
        raise ValueError("region shape does not match images")
    if not mask.any():
        raise ValueError("empty region")
    return mask


def abs_bias(recons, gt, region=None) -> float:
    """Mean absolute deviation from ground truth, pooled over replicates
    and region pixels."""
    stack = _stack(recons)
    truth = _to_array(gt)
    if truth.shape != stack.shape[1:]:
        raise ValueError("ground truth shape does not match replicates")
    mask = _resolve_region(region, truth, truth.shape)
    return float(np.mean(np.abs(stack[:, mask] - truth[mask])))


def std_metric(recons, gt=None, region=None) -> float:
    """Region-averaged per-pixel ensemble standard deviation.

    Population normalization (1/n over replicates); a single replicate
    therefore yields 0.0, which callers reporting tables should flag as
    undefined rather than as genuine zero spread.

    `gt` is only used to derive the default region.
    """
    stack = _stack(recons)
    if region is None and gt is None:
        raise ValueError("need gt or an explicit region")
    mask = _resolve_region(region, gt if gt is not None else None, stack.shape[1:])
    return float(np.mean(np.std(stack[:, mask], axis=0)))


def nrmse(x, ref) -> float:
    """Root-mean-square error normalized by the reference norm."""
    a, b = _to_array(x), _to_array(ref)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    denom = float(np.linalg.norm(b))
    if denom == 0.0:
        raise ValueError("reference image is all zero")
    return float(np.linalg.norm(a - b)) / denom
