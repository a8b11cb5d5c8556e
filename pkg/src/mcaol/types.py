"""Value types shared across the toolkit and their on-disk codecs.

Images, sinograms and filter banks are plain immutable containers around
float64 numpy arrays.  Every array travels on disk as a little-endian
float64 `.raw` blob with a JSON sidecar describing its shape and physical
metadata, so artifacts stay inspectable with nothing but numpy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Generic, TypeVar

import numpy as np

__all__ = [
    "Image",
    "Sinogram",
    "FilterBank",
    "FeatureStack",
    "ChannelPair",
    "image_to_raw",
    "image_from_raw",
    "save_image",
    "load_image",
    "save_sinogram",
    "load_sinogram",
    "save_bank",
    "load_bank",
]

T = TypeVar("T")


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class Image:
    """Square attenuation image on a regular grid.

    Values are linear attenuation coefficients in mm^-1, stored flat in
    row-major order.  Instances are immutable; two images built from equal
    inputs compare equal.
    """

    width: int
    height: int
    pixel_size: float
    values: np.ndarray
    energy: float | None = None

    def __post_init__(self):
        if self.width != self.height:
            raise ValueError(f"image must be square, got {self.width}x{self.height}")
        if self.width <= 0:
            raise ValueError("image dimensions must be positive")
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.width * self.height:
            raise ValueError(
                f"expected {self.width * self.height} values, got {v.size}"
            )
        _require_finite(v, "image")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def from_array(cls, a: np.ndarray, pixel_size: float, energy: float | None = None) -> "Image":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected a 2D array")
        return cls(a.shape[1], a.shape[0], pixel_size, a.ravel(), energy)

    @property
    def array(self) -> np.ndarray:
        """Values as a read-only (height, width) view."""
        return self.values.reshape(self.height, self.width)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.pixel_size == other.pixel_size
            and self.energy == other.energy
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Projection data on a (detectors, angles) grid.

    `units` is "mm" for line integrals and "counts" for photon data.
    Count sinograms hold nonnegative integer-valued float64 entries.
    """

    detectors: int
    angles: np.ndarray
    values: np.ndarray
    units: str = "mm"
    energy: float | None = None

    def __post_init__(self):
        ang = np.asarray(self.angles, dtype=np.float64).ravel()
        if ang.size == 0:
            raise ValueError("need at least one view angle")
        if ang.size > 1 and not np.all(np.diff(ang) > 0):
            raise ValueError("angles must be strictly increasing")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.detectors, ang.size):
            raise ValueError(
                f"values shape {v.shape} does not match "
                f"({self.detectors}, {ang.size})"
            )
        _require_finite(v, "sinogram")
        object.__setattr__(self, "angles", _freeze(ang))
        object.__setattr__(self, "values", _freeze(v.ravel()).reshape(v.shape))

    def __eq__(self, other):
        if not isinstance(other, Sinogram):
            return NotImplemented
        return (
            self.detectors == other.detectors
            and self.units == other.units
            and self.energy == other.energy
            and np.array_equal(self.angles, other.angles)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class FilterBank:
    """K square convolution filters of odd side length.

    Stored as a (count, filter_size, filter_size) array.  `as_matrix`
    stacks the vectorized filters as columns of a P x K matrix, the shape
    used by the tight-frame constraint.
    """

    filter_size: int
    count: int
    values: np.ndarray
    channel: str | None = None
    provenance: str | None = None

    def __post_init__(self):
        if self.filter_size <= 0 or self.filter_size % 2 == 0:
            raise ValueError("filter_size must be odd and positive")
        if self.count <= 0:
            raise ValueError("filter count must be positive")
        v = np.asarray(self.values, dtype=np.float64)
        want = (self.count, self.filter_size, self.filter_size)
        if v.shape != want:
            raise ValueError(f"filter array shape {v.shape}, expected {want}")
        _require_finite(v, "filter bank")
        object.__setattr__(self, "values", _freeze(v.ravel()).reshape(want))

    @property
    def patch_size(self) -> int:
        """Number of coefficients P per filter."""
        return self.filter_size * self.filter_size

    def as_matrix(self) -> np.ndarray:
        """Filters as columns of a P x K matrix."""
        return self.values.reshape(self.count, -1).T.copy()

    @classmethod
    def from_matrix(cls, m: np.ndarray, filter_size: int, **kw) -> "FilterBank":
        m = np.asarray(m, dtype=np.float64)
        p = filter_size * filter_size
        if m.ndim != 2 or m.shape[0] != p:
            raise ValueError(f"expected a {p} x K matrix, got {m.shape}")
        stack = m.T.reshape(m.shape[1], filter_size, filter_size)
        return cls(filter_size, m.shape[1], stack, **kw)

    def tight_frame_residual(self) -> float:
        """Frobenius distance of M M^T from (1/P) I."""
        m = self.as_matrix()
        p = m.shape[0]
        return float(np.linalg.norm(m @ m.T - np.eye(p) / p, "fro"))

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return (
            self.filter_size == other.filter_size
            and self.count == other.count
            and self.channel == other.channel
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """K feature maps produced by filtering one image."""

    count: int
    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.float64)
        if m.ndim != 3 or m.shape[0] != self.count:
            raise ValueError(f"expected ({self.count}, H, W) maps, got {m.shape}")
        _require_finite(m, "feature stack")
        object.__setattr__(self, "maps", _freeze(m.ravel()).reshape(m.shape))

    def __eq__(self, other):
        if not isinstance(other, FeatureStack):
            return NotImplemented
        return self.count == other.count and np.array_equal(self.maps, other.maps)


@dataclass(frozen=True)
class ChannelPair(Generic[T]):
    """Low/high energy pairing of any payload type."""

    low: T
    high: T
    labels: tuple = (60.0, 120.0)

    def __post_init__(self):
        if len(self.labels) != 2 or self.labels[0] == self.labels[1]:
            raise ValueError("labels must be two distinct energy identifiers")

    def as_tuple(self) -> tuple:
        return (self.low, self.high)

    def map(self, fn) -> "ChannelPair":
        return ChannelPair(fn(self.low), fn(self.high), self.labels)


# ---------------------------------------------------------------------------
# raw codecs


def image_to_raw(img: Image) -> tuple[bytes, dict]:
    """Serialize an image to (little-endian float64 bytes, JSON header)."""
    header = {
        "width": img.width,
        "height": img.height,
        "pixel_size": img.pixel_size,
        "units": "mm^-1",
    }
    if img.energy is not None:
        header["energy"] = img.energy
    return img.values.astype("<f8").tobytes(), header


def image_from_raw(buf: bytes, header: dict) -> Image:
    """Rebuild an image from raw bytes and its sidecar header.

    Raises:
        ValueError: buffer length inconsistent with the header, or
            non-finite pixel values.
    """
    w, h = int(header["width"]), int(header["height"])
    expect = 8 * w * h
    if len(buf) != expect:
        raise ValueError(f"raw buffer is {len(buf)} bytes, expected {expect}")
    vals = np.frombuffer(buf, dtype="<f8")
    return Image(w, h, float(header["pixel_size"]), vals, header.get("energy"))


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".raw", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".raw"), p.with_suffix(".json")


def save_image(img: Image, path) -> Path:
    """Write `<path>.raw` plus `<path>.json`; returns the raw path."""
    raw_path, json_path = _paths(path)
    buf, header = image_to_raw(img)
    raw_path.write_bytes(buf)
    json_path.write_text(json.dumps(header, indent=1) + "\n")
    return raw_path


def load_image(path) -> Image:
    raw_path, json_path = _paths(path)
    header = json.loads(json_path.read_text())
    return image_from_raw(raw_path.read_bytes(), header)


def save_sinogram(s: Sinogram, path) -> Path:
    raw_path, json_path = _paths(path)
    header = {
        "detectors": s.detectors,
        "angles": list(s.angles),
        "units": s.units,
    }
    if s.energy is not None:
        header["energy"] = s.energy
    raw_path.write_bytes(s.values.astype("<f8").tobytes())
    json_path.write_text(json.dumps(header, indent=1) + "\n")
    return raw_path


def load_sinogram(path) -> Sinogram:
    raw_path, json_path = _paths(path)
    header = json.loads(json_path.read_text())
    nd = int(header["detectors"])
    angles = np.asarray(header["angles"], dtype=np.float64)
    buf = raw_path.read_bytes()
    expect = 8 * nd * angles.size
    if len(buf) != expect:
        raise ValueError(f"raw buffer is {len(buf)} bytes, expected {expect}")
    vals = np.frombuffer(buf, dtype="<f8").reshape(nd, angles.size)
    return Sinogram(nd, angles, vals, header.get("units", "mm"), header.get("energy"))


def save_bank(bank: FilterBank, path) -> Path:
    """Write `<path>.bank.raw` plus `<path>.bank.json`."""
    p = Path(path)
    name = p.name
    for suffix in (".raw", ".json"):
        if name.endswith(".bank" + suffix):
            name = name[: -len(".bank" + suffix)]
    if name.endswith(".bank"):
        name = name[: -len(".bank")]
    base = p.with_name(name)
    raw_path = base.with_name(base.name + ".bank.raw")
    json_path = base.with_name(base.name + ".bank.json")
    header = {
        "patch_size": bank.patch_size,
        "filter_size": bank.filter_size,
        "count": bank.count,
    }
    if bank.channel is not None:
        header["channel"] = bank.channel
    if bank.provenance is not None:
        header["provenance"] = bank.provenance
    raw_path.write_bytes(bank.values.astype("<f8").tobytes())
    json_path.write_text(json.dumps(header, indent=1) + "\n")
    return raw_path


def load_bank(path) -> FilterBank:
    p = Path(path)
    name = p.name
    for suffix in (".raw", ".json"):
        if name.endswith(".bank" + suffix):
            name = name[: -len(suffix)]
    if not name.endswith(".bank"):
        name = name + ".bank"
    raw_path = p.with_name(name + ".raw")
    json_path = p.with_name(name + ".json")
    header = json.loads(json_path.read_text())
    size = int(header["filter_size"])
    count = int(header["count"])
    buf = raw_path.read_bytes()
    expect = 8 * count * size * size
    if len(buf) != expect:
        raise ValueError(f"raw buffer is {len(buf)} bytes, expected {expect}")
    vals = np.frombuffer(buf, dtype="<f8").reshape(count, size, size)
    return FilterBank(size, count, vals, header.get("channel"), header.get("provenance"))
