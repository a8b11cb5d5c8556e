"""Parallel-beam system matrix built by exact ray tracing.

Each matrix entry is the intersection length in mm of one ray with one
square pixel, computed by walking the ray through the grid planes.  An
optional detector blur composes the rows with a discrete Gaussian across
detector bins; the smoothing kernel is normalized so the total path
length per view is conserved.  Matrices are cached on disk keyed by a
hash of the geometry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .types import Image, Sinogram

__all__ = [
    "ScanGeometry",
    "SystemMatrix",
    "build_system_matrix",
    "forward_project",
    "back_project",
    "geometry_hash",
    "save_system_matrix",
    "load_system_matrix",
    "cached_system_matrix",
]

_FWHM_TO_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))
_MAGIC = b"SYSM\x01"


@dataclass(frozen=True, eq=False)
class ScanGeometry:
    """Parallel-beam acquisition layout.

    Detector bins are centered on the rotation axis with spacing
    `detector_pitch`; `fwhm_blur` is the full width at half maximum of
    the detector response in mm (0 disables blur).
    """

    detectors: int
    angles: np.ndarray
    detector_pitch: float = 1.0
    pixel_size: float = 1.0
    fwhm_blur: float = 0.0

    def __post_init__(self):
        if self.detectors <= 0:
            raise ValueError("need at least one detector")
        if self.detector_pitch <= 0 or self.pixel_size <= 0:
            raise ValueError("detector_pitch and pixel_size must be positive")
        if self.fwhm_blur < 0:
            raise ValueError("fwhm_blur must be nonnegative")
        ang = np.asarray(self.angles, dtype=np.float64).ravel()
        if ang.size == 0:
            raise ValueError("need at least one view angle")
        if ang.size > 1 and not np.all(np.diff(ang) > 0):
            raise ValueError("angles must be strictly increasing")
        a = ang.copy()
        a.flags.writeable = False
        object.__setattr__(self, "angles", a)

    @classmethod
    def parallel(cls, detectors: int, n_angles: int, detector_pitch: float = 1.0,
                 pixel_size: float = 1.0, fwhm_blur: float = 0.0) -> "ScanGeometry":
        """Geometry with n_angles views equally spaced over [0, 2pi)."""
        if n_angles <= 0:
            raise ValueError("need at least one view angle")
        angles = 2.0 * np.pi * np.arange(n_angles) / n_angles
        return cls(detectors, angles, detector_pitch, pixel_size, fwhm_blur)

    @property
    def n_angles(self) -> int:
        return int(self.angles.size)

    def __eq__(self, other):
        if not isinstance(other, ScanGeometry):
            return NotImplemented
        return (
            self.detectors == other.detectors
            and self.detector_pitch == other.detector_pitch
            and self.pixel_size == other.pixel_size
            and self.fwhm_blur == other.fwhm_blur
            and np.array_equal(self.angles, other.angles)
        )


@dataclass(eq=False)
class SystemMatrix:
    """Sparse CSR ray-tracing matrix for one (geometry, grid) pairing.

    Rows are rays ordered detector-major: ray (d, a) is row d * n_angles + a,
    matching the row-major flattening of a (detectors, angles) sinogram.
    """

    geometry: ScanGeometry
    image_size: int
    matrix: sp.csr_matrix
    _transpose: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.geometry.detectors, self.geometry.n_angles)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Line integrals of a (n, n) image; returns (detectors, angles)."""
        x = np.asarray(x, dtype=np.float64)
        n = self.image_size
        if x.shape != (n, n):
            raise ValueError(f"image shape {x.shape}, expected ({n}, {n})")
        return (self.matrix @ x.ravel()).reshape(self.sino_shape)

    def apply_adjoint(self, s: np.ndarray) -> np.ndarray:
        """Backprojection of a (detectors, angles) sinogram to (n, n)."""
        s = np.asarray(s, dtype=np.float64)
        if s.shape != self.sino_shape:
            raise ValueError(f"sinogram shape {s.shape}, expected {self.sino_shape}")
        if self._transpose is None:
            self._transpose = self.matrix.T.tocsr()
        n = self.image_size
        return (self._transpose @ s.ravel()).reshape(n, n)


def _trace_ray(p0x, p0y, dx, dy, xmin, h, n):
    """Pixel indices and chord lengths for one ray through an n x n grid."""
    planes = xmin + h * np.arange(n + 1)
    tiny = 1e-12 * h
    alphas = []
    lo, hi = -np.inf, np.inf
    for p0, dir_ in ((p0x, dx), (p0y, dy)):
        if abs(dir_) > 1e-14:
            a = (planes - p0) / dir_
            lo = max(lo, min(a[0], a[-1]))
            hi = min(hi, max(a[0], a[-1]))
            alphas.append(a)
        elif not (xmin <= p0 <= xmin + n * h):
            return None
    if hi <= lo + tiny:
        return None
    parts = [np.array([lo, hi])]
    for a in alphas:
        parts.append(a[(a > lo) & (a < hi)])
    alpha = np.unique(np.concatenate(parts))
    lengths = np.diff(alpha)
    keep = lengths > tiny
    if not np.any(keep):
        return None
    mid = 0.5 * (alpha[:-1] + alpha[1:])[keep]
    ix = np.clip(((p0x + mid * dx - xmin) / h).astype(np.int64), 0, n - 1)
    iy = np.clip(((p0y + mid * dy - xmin) / h).astype(np.int64), 0, n - 1)
    # row index counts down from the top of the image, y counts up
    rows = n - 1 - iy
    return rows * n + ix, lengths[keep]


def _detector_blur(geom: ScanGeometry) -> sp.spmatrix | None:
    if geom.fwhm_blur == 0.0:
        return None
    sigma = geom.fwhm_blur / _FWHM_TO_SIGMA
    half = int(np.floor(4.0 * sigma / geom.detector_pitch))
    if half == 0:
        return None
    offs = np.arange(-half, half + 1)
    g = np.exp(-((offs * geom.detector_pitch) ** 2) / (2.0 * sigma * sigma))
    nd = geom.detectors
    b = np.zeros((nd, nd))
    for src in range(nd):
        dst = src + offs
        ok = (dst >= 0) & (dst < nd)
        w = g[ok]
        b[dst[ok], src] = w / w.sum()
    return sp.csr_matrix(b)


def build_system_matrix(geom: ScanGeometry, image_size: int) -> SystemMatrix:
    """Trace every ray of the geometry through an image_size^2 grid.

    Raises:
        ValueError: detector row shorter than the image width.
    """
    n = int(image_size)
    if n <= 0:
        raise ValueError("image_size must be positive")
    if geom.detectors < n:
        raise ValueError(
            f"{geom.detectors} detectors cannot cover a width-{n} image"
        )
    h = geom.pixel_size
    xmin = -0.5 * n * h
    offsets = (np.arange(geom.detectors) - 0.5 * (geom.detectors - 1)) * geom.detector_pitch
    rows, cols, vals = [], [], []
    n_ang = geom.n_angles
    for a, theta in enumerate(geom.angles):
        dx, dy = np.cos(theta), np.sin(theta)
        ux, uy = -dy, dx
        for d, t in enumerate(offsets):
            hit = _trace_ray(t * ux, t * uy, dx, dy, xmin, h, n)
            if hit is None:
                continue
            pix, lens = hit
            rows.append(np.full(pix.size, d * n_ang + a, dtype=np.int64))
            cols.append(pix)
            vals.append(lens)
    shape = (geom.detectors * n_ang, n * n)
    if rows:
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=shape,
        ).tocsr()
    else:
        mat = sp.csr_matrix(shape)
    blur = _detector_blur(geom)
    if blur is not None:
        mat = (sp.kron(blur, sp.eye(n_ang, format="csr"), format="csr") @ mat).tocsr()
    mat.sort_indices()
    return SystemMatrix(geom, n, mat)


def forward_project(sm: SystemMatrix, x):
    """Apply the matrix; Image in gives Sinogram out, array in array out."""
    if isinstance(x, Image):
        if x.width != sm.image_size:
            raise ValueError(
                f"image width {x.width} does not match matrix grid {sm.image_size}"
            )
        vals = sm.apply(x.array)
        return Sinogram(sm.geometry.detectors, sm.geometry.angles, vals,
                        units="mm", energy=x.energy)
    return sm.apply(x)


def back_project(sm: SystemMatrix, s):
    """Apply the transpose; Sinogram in gives Image out, array in array out."""
    if isinstance(s, Sinogram):
        vals = sm.apply_adjoint(s.values)
        return Image.from_array(vals, sm.geometry.pixel_size, s.energy)
    return sm.apply_adjoint(s)


# ---------------------------------------------------------------------------
# disk cache


def geometry_hash(geom: ScanGeometry, image_size: int) -> str:
    """Stable identifier of (geometry, grid size) for cache lookups."""
    doc = {
        "detectors": geom.detectors,
        "angles": [float(a).hex() for a in geom.angles],
        "detector_pitch": float(geom.detector_pitch).hex(),
        "pixel_size": float(geom.pixel_size).hex(),
        "fwhm_blur": float(geom.fwhm_blur).hex(),
        "image_size": int(image_size),
        "format": 1,
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_system_matrix(sm: SystemMatrix, cache_dir) -> Path:
    """Write `<hash>.sysmat` plus a JSON descriptor; returns the binary path."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = geometry_hash(sm.geometry, sm.image_size)
    mat = sm.matrix
    path = cache_dir / f"{key}.sysmat"
    with open(path, "wb") as f:
        f.write(_MAGIC)
        np.asarray([mat.shape[0], mat.shape[1], mat.nnz], dtype="<u8").tofile(f)
        mat.indptr.astype("<i8").tofile(f)
        mat.indices.astype("<i8").tofile(f)
        mat.data.astype("<f8").tofile(f)
    desc = {
        "detectors": sm.geometry.detectors,
        "n_angles": sm.geometry.n_angles,
        "angles": list(map(float, sm.geometry.angles)),
        "detector_pitch": sm.geometry.detector_pitch,
        "pixel_size": sm.geometry.pixel_size,
        "fwhm_blur": sm.geometry.fwhm_blur,
        "image_size": sm.image_size,
        "nnz": int(mat.nnz),
    }
    (cache_dir / f"{key}.json").write_text(json.dumps(desc, indent=1) + "\n")
    return path


def load_system_matrix(geom: ScanGeometry, image_size: int, cache_dir) -> SystemMatrix | None:
    """Load a cached matrix; returns None on any mismatch or missing file."""
    path = Path(cache_dir) / f"{geometry_hash(geom, image_size)}.sysmat"
    if not path.exists():
        return None
    raw = path.read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        return None
    head = np.frombuffer(raw, dtype="<u8", count=3, offset=len(_MAGIC))
    nrow, ncol, nnz = (int(v) for v in head)
    off = len(_MAGIC) + 24
    indptr = np.frombuffer(raw, dtype="<i8", count=nrow + 1, offset=off)
    off += 8 * (nrow + 1)
    indices = np.frombuffer(raw, dtype="<i8", count=nnz, offset=off)
    off += 8 * nnz
    data = np.frombuffer(raw, dtype="<f8", count=nnz, offset=off)
    if nrow != geom.detectors * geom.n_angles or ncol != image_size * image_size:
        return None
    mat = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(nrow, ncol))
    return SystemMatrix(geom, image_size, mat)


def cached_system_matrix(geom: ScanGeometry, image_size: int, cache_dir) -> SystemMatrix:
    """Load from cache or build and store."""
    sm = load_system_matrix(geom, image_size, cache_dir)
    if sm is None:
        sm = build_system_matrix(geom, image_size)
        save_system_matrix(sm, cache_dir)
    return sm
