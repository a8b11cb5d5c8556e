"""Synthetic dual-energy torso phantoms and desk-scale study presets.

A phantom is a list of ellipses with per-channel attenuation increments
plus elliptically windowed stripe gratings; a pixel takes the sum of
the overlays covering its center, and the result is strictly
nonnegative.  The organs are piecewise constant, the gratings add
oscillatory tissue texture.  Presets bundle the phantom with the
acquisition geometry and source statistics of the replicate studies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .physics import SourceModel
from .projector import ScanGeometry
from .types import ChannelPair, Image

__all__ = ["Ellipse", "Grating", "StudyPreset", "PRESETS", "get_preset",
           "make_phantom", "make_smooth_phantom", "training_phantoms"]


@dataclass(frozen=True)
class Ellipse:
    """One ellipse: center/semi-axes in mm, tilt in radians, and the
    attenuation increment it adds in each channel (mm^-1, may be
    negative for carve-outs as long as the summed phantom stays >= 0)."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float
    low: float
    high: float


@dataclass(frozen=True)
class Grating:
    """Raised-cosine stripe pattern confined to an ellipse.

    Stripes run along the major axis; the attenuation added is
    amp * (1 + cos(2 pi v / period + phase)) / 2 with v the signed
    distance along the minor axis, so values span [0, amp] and the
    overlay never drives the phantom negative.  `low` / `high` are the
    per-channel peak amplitudes."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float
    period: float
    phase: float
    low: float
    high: float


@dataclass(frozen=True)
class StudyPreset:
    """Phantom plus acquisition settings of one replicate study."""

    name: str
    image_size: int
    pixel_size: float
    detectors: int
    n_views: int
    detector_pitch: float
    fwhm_blur: float
    incident: float
    background: float
    replicates: int
    labels: tuple
    ellipses: tuple
    gratings: tuple = ()

    def geometry(self) -> ScanGeometry:
        return ScanGeometry.parallel(self.detectors, self.n_views,
                                     self.detector_pitch, self.pixel_size,
                                     self.fwhm_blur)

    def sources(self) -> ChannelPair:
        src = SourceModel(self.incident, self.background)
        return ChannelPair(src, src, self.labels)


# Tissue-like increments: body of water, low-density lungs carved out,
# bone inserts with strong energy contrast, faint soft-tissue lesions.
_ORGANS = (
    Ellipse(0.0, 0.0, 28.0, 24.0, 0.0, 0.020, 0.016),
    Ellipse(-11.0, 4.0, 8.0, 11.0, 0.15, -0.015, -0.012),
    Ellipse(11.0, 4.0, 8.0, 11.0, -0.15, -0.015, -0.012),
    Ellipse(0.0, -16.0, 4.5, 4.5, 0.0, 0.040, 0.012),
    Ellipse(-18.0, -10.0, 2.5, 2.5, 0.0, 0.030, 0.009),
    Ellipse(18.0, -10.0, 2.5, 2.5, 0.0, 0.030, 0.009),
    Ellipse(6.0, 8.0, 5.0, 4.0, 0.3, 0.004, 0.003),
    Ellipse(-8.0, -2.0, 3.5, 3.5, 0.0, 0.005, 0.004),
    Ellipse(0.0, 14.0, 3.0, 2.0, 0.0, 0.006, 0.005),
)


def _stripes(count: int, seed: int) -> tuple:
    """Oriented tissue texture: elliptical patches of period-3 stripe
    gratings in the two axis-aligned orientation families, packed into
    the central body.  Fine oscillatory structure is what separates the
    priors: a matched filter concentrates a grating into few large
    responses, while gradient penalties pay for every stripe.
    Deterministic."""
    rng = np.random.default_rng(seed)
    families = (0.0, np.pi / 2)
    out = []
    for _ in range(10000):
        if len(out) == count:
            break
        cx = rng.uniform(-20.0, 20.0)
        cy = rng.uniform(-16.0, 16.0)
        if (cx / 20.0) ** 2 + (cy / 16.0) ** 2 > 1.0:
            continue
        # spread the patches: at most pairwise overlap, no deep stacks
        if any((cx - g.cx) ** 2 + (cy - g.cy) ** 2 < 5.5 ** 2 for g in out):
            continue
        angle = families[rng.integers(2)] + rng.uniform(-0.05, 0.05)
        low = rng.uniform(0.023, 0.033)
        out.append(Grating(cx, cy, rng.uniform(5.5, 8.0),
                           rng.uniform(4.0, 6.0), angle, 3.0,
                           rng.uniform(0.0, 2.0 * np.pi),
                           low, low * rng.uniform(0.70, 0.85)))
    if len(out) < count:
        raise ValueError(f"could not place {count} texture patches")
    return tuple(out)


_TEXTURE = _stripes(18, 20260815)


def _scaled(factor: float, pieces: tuple) -> tuple:
    out = []
    for p in pieces:
        fields = {"cx": p.cx * factor, "cy": p.cy * factor,
                  "a": p.a * factor, "b": p.b * factor}
        if isinstance(p, Grating):
            fields["period"] = p.period * factor
        out.append(replace(p, **fields))
    return tuple(out)


PRESETS = {
    "torso64": StudyPreset("torso64", 64, 1.0, 64, 60, 1.0, 1.0,
                           1e5, 10.0, 5, (60.0, 120.0), _ORGANS, _TEXTURE),
    "lowdose64": StudyPreset("lowdose64", 64, 1.0, 64, 120, 1.0, 1.0,
                             1e3, 10.0, 5, (60.0, 120.0), _ORGANS, _TEXTURE),
    "torso406": StudyPreset("torso406", 406, 1.0, 406, 60, 1.0, 2.0,
                            1e5, 100.0, 20, (60.0, 120.0),
                            _scaled(6.3, _ORGANS), _scaled(6.3, _TEXTURE)),
}


def get_preset(name: str) -> StudyPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None


def _grid(size: int, pixel_size: float) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 * (size - 1) * pixel_size
    xs = -half + pixel_size * np.arange(size)
    return xs[None, :], half - pixel_size * np.arange(size)[:, None]


def _rasterize(ellipses, size: int, pixel_size: float,
               gratings=()) -> tuple[np.ndarray, np.ndarray]:
    px, py = _grid(size, pixel_size)
    low = np.zeros((size, size))
    high = np.zeros((size, size))
    for e in ellipses:
        ca, sa = np.cos(e.angle), np.sin(e.angle)
        u = (px - e.cx) * ca + (py - e.cy) * sa
        v = -(px - e.cx) * sa + (py - e.cy) * ca
        inside = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
        low += np.where(inside, e.low, 0.0)
        high += np.where(inside, e.high, 0.0)
    for g in gratings:
        ca, sa = np.cos(g.angle), np.sin(g.angle)
        u = (px - g.cx) * ca + (py - g.cy) * sa
        v = -(px - g.cx) * sa + (py - g.cy) * ca
        inside = (u / g.a) ** 2 + (v / g.b) ** 2 <= 1.0
        wave = 0.5 * (1.0 + np.cos(2.0 * np.pi * v / g.period + g.phase))
        low += np.where(inside, g.low * wave, 0.0)
        high += np.where(inside, g.high * wave, 0.0)
    return low, high


def make_phantom(preset) -> ChannelPair:
    """Ground-truth image pair of a preset (or explicit StudyPreset).

    Raises:
        ValueError: the overlay sum goes negative somewhere.
    """
    p = get_preset(preset) if isinstance(preset, str) else preset
    low, high = _rasterize(p.ellipses, p.image_size, p.pixel_size, p.gratings)
    if low.min() < 0 or high.min() < 0:
        raise ValueError("phantom attenuation went negative")
    return ChannelPair(Image.from_array(low, p.pixel_size, p.labels[0]),
                       Image.from_array(high, p.pixel_size, p.labels[1]),
                       p.labels)


def make_smooth_phantom(preset) -> ChannelPair:
    """Texture-free (piecewise-constant) variant of a preset's phantom.

    Drops the grating overlay, keeping the organ ellipses.  Noiseless
    projection data fully determines this variant at the preset view
    counts, which makes it the target for end-to-end recovery checks;
    the textured phantom deliberately is not fully data-determined (the
    texture is what the priors must carry).
    """
    p = get_preset(preset) if isinstance(preset, str) else preset
    return make_phantom(replace(p, gratings=()))


def training_phantoms(preset, count: int, seed: int) -> list[ChannelPair]:
    """Jittered phantom variants used as the training corpus.

    Ellipse centers, axes and values are perturbed per variant with
    bounded factors; gratings move, rotate and rephase as whole patches
    with their period intact, so anatomy varies while the texture
    statistics the filters must learn stay stable.  The ground-truth
    phantom itself is not in the returned set.
    """
    p = get_preset(preset) if isinstance(preset, str) else preset
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    scale = p.pixel_size * p.image_size / 64.0
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 50 * count:
            raise ValueError("could not draw a nonnegative phantom variant")
        variants = []
        for e in p.ellipses:
            f_ax = rng.uniform(0.88, 1.12)
            f_val = rng.uniform(0.94, 1.06)
            variants.append(Ellipse(
                e.cx + rng.uniform(-2.0, 2.0) * scale,
                e.cy + rng.uniform(-2.0, 2.0) * scale,
                e.a * f_ax, e.b * f_ax,
                e.angle + rng.uniform(-0.12, 0.12),
                e.low * f_val, e.high * f_val,
            ))
        waves = []
        for g in p.gratings:
            f_ax = rng.uniform(0.88, 1.12)
            f_val = rng.uniform(0.94, 1.06)
            waves.append(replace(
                g,
                cx=g.cx + rng.uniform(-2.0, 2.0) * scale,
                cy=g.cy + rng.uniform(-2.0, 2.0) * scale,
                a=g.a * f_ax, b=g.b * f_ax,
                angle=g.angle + rng.uniform(-0.05, 0.05),
                phase=rng.uniform(0.0, 2.0 * np.pi),
                low=g.low * f_val, high=g.high * f_val,
            ))
        try:
            out.append(make_phantom(replace(p, ellipses=tuple(variants),
                                            gratings=tuple(waves))))
        except ValueError:
            continue
    return out
