"""Shared fixtures: small geometries, synthetic corpora, trained banks.

Session scope keeps the expensive artifacts (system matrices, trained
banks) built once; everything is deterministically seeded.
"""

import numpy as np
import pytest

from mcaol.learning import TrainConfig, mcaol_train
from mcaol.phantom import get_preset, make_phantom
from mcaol.projector import ScanGeometry, build_system_matrix
from mcaol.types import ChannelPair, Image


def synthetic_pairs(count, size, seed):
    """Correlated low/high image pairs with blob texture on a smooth
    background; strictly nonnegative, mm^-1-like scale."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / float(size)
    pairs = []
    for _ in range(count):
        base = 0.02 + 0.005 * np.sin(2 * np.pi * (xs * rng.uniform(1, 3)
                                                  + rng.uniform(0, 1)))
        blobs = np.zeros((size, size))
        for _ in range(8):
            cx, cy = rng.uniform(0.1, 0.9, 2)
            r = rng.uniform(0.03, 0.1)
            blobs += rng.uniform(0.003, 0.01) * ((xs - cx) ** 2
                                                 + (ys - cy) ** 2 < r * r)
        low = base + blobs
        high = 0.8 * base + rng.uniform(0.6, 0.9) * blobs
        pairs.append(ChannelPair(Image.from_array(low, 1.0, 60.0),
                                 Image.from_array(high, 1.0, 120.0)))
    return pairs


@pytest.fixture(scope="session")
def small_geometry():
    return ScanGeometry.parallel(16, 12, 1.0, 1.0, 0.0)


@pytest.fixture(scope="session")
def small_sm(small_geometry):
    return build_system_matrix(small_geometry, 16)


@pytest.fixture(scope="session")
def torso_sm():
    p = get_preset("torso64")
    return build_system_matrix(p.geometry(), p.image_size)


@pytest.fixture(scope="session")
def torso_gt():
    return make_phantom("torso64")


@pytest.fixture(scope="session")
def tiny_banks():
    """3x3 banks trained on 16x16 pairs; enough structure for recon tests."""
    pairs = synthetic_pairs(3, 16, 11)
    cfg = TrainConfig(filter_size=3, filter_count=9, alpha=1e-5,
                      gammas=(1e5, 1e5), max_outer=60, tol=1e-6, seed=0,
                      normalize=False)
    return mcaol_train(pairs, cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
