"""Dense 3D volumes and the conform preprocessing step.

A ``Volume3D`` stores voxels in an ``(nx, ny, nz)`` array whose flattened
x-fastest order matches the on-disk NIfTI layout, together with voxel
spacing and a 4x4 voxel-to-world affine.

``conform`` resamples any input onto the canonical 256^3 grid at 1 mm
isotropic spacing, centered on the input's world-space center, then rescales
intensities to integer values in [0, 255].  The interpolation and rescale
arithmetic is written with a fixed operation order so independent ports can
reproduce results exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoxOutOfRange, DegenerateAffine, EmptyMask

CONFORM_EXTENT = 256
CONFORM_SPACING = 1.0

# Volumes above this voxel count have their rescale percentiles estimated
# from a 1-in-8 strided sample to bound sort memory; 256^3 is exactly at the
# threshold and still gets the full sort.
_PERCENTILE_SAMPLE_THRESHOLD = 2 ** 24


@dataclass
class Volume3D:
    """Dense scalar grid with spacing and a voxel-to-world affine.

    ``data`` is indexed ``[x, y, z]``; flattening with Fortran order yields
    the x-fastest stream that the NIfTI writer emits.  Carries either MRI
    intensities (float) or label maps (integer-valued).
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    affine: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"expected 3D data, got shape {self.data.shape}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if not np.array_equal(self.affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("affine last row must be (0, 0, 0, 1)")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def with_data(self, data: np.ndarray) -> "Volume3D":
        """Same geometry, new voxel values (shape must match)."""
        if data.shape != self.data.shape:
            raise ValueError("replacement data must keep the extents")
        return Volume3D(data, self.spacing, self.affine.copy())


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive voxel-index box ``min..max`` on both ends."""

    min: tuple[int, int, int]
    max: tuple[int, int, int]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.min, self.max)):
            raise ValueError(f"box min {self.min} exceeds max {self.max}")

    @property
    def extents(self) -> tuple[int, int, int]:
        return tuple(b - a + 1 for a, b in zip(self.min, self.max))  # type: ignore[return-value]


def identity_affine(spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
                    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    aff = np.eye(4)
    aff[0, 0], aff[1, 1], aff[2, 2] = spacing
    aff[:3, 3] = origin
    return aff


def _inv3(m: np.ndarray) -> np.ndarray:
    """Closed-form inverse of the affine's 3x3 part (adjugate over determinant).

    Hand-rolled instead of np.linalg.inv so the arithmetic is a fixed formula
    that ports can replicate operation-for-operation.
    """
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    co00 = e * i - f * h
    co01 = f * g - d * i
    co02 = d * h - e * g
    det = a * co00 + b * co01 + c * co02
    if det == 0.0 or not math.isfinite(det):
        raise DegenerateAffine("voxel-to-world affine is singular")
    inv = np.empty((3, 3), dtype=np.float64)
    inv[0, 0] = co00 / det
    inv[0, 1] = (c * h - b * i) / det
    inv[0, 2] = (b * f - c * e) / det
    inv[1, 0] = co01 / det
    inv[1, 1] = (a * i - c * g) / det
    inv[1, 2] = (c * d - a * f) / det
    inv[2, 0] = co02 / det
    inv[2, 1] = (b * g - a * h) / det
    inv[2, 2] = (a * e - b * d) / det
    return inv


def _mat3_vec(m: np.ndarray, v) -> np.ndarray:
    """Explicit left-to-right 3x3 matrix-vector product (pinned op order)."""
    return np.array([
        m[0, 0] * v[0] + m[0, 1] * v[1] + m[0, 2] * v[2],
        m[1, 0] * v[0] + m[1, 1] * v[1] + m[1, 2] * v[2],
        m[2, 0] * v[0] + m[2, 1] * v[1] + m[2, 2] * v[2],
    ])


def _world_center(vol: Volume3D) -> np.ndarray:
    m = vol.affine[:3, :3]
    b = vol.affine[:3, 3]
    nx, ny, nz = vol.extents
    center_idx = ((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0)
    return _mat3_vec(m, center_idx) + b


def _source_coordinates(vol: Volume3D, extent: int, spacing: float,
                        x_lo: int, x_hi: int):
    """Map output voxel indices (x in [x_lo, x_hi)) of the conform grid into
    input index space.

    The output grid is axis-aligned at ``spacing`` mm with its world-space
    center on the input volume's center.  Returns float64 coordinate arrays
    (cx, cy, cz) of shape (x_hi - x_lo, extent, extent).
    """
    b = vol.affine[:3, 3]
    half = (extent - 1) / 2.0
    # world position of output voxel v along axis k: spacing*v + t[k]
    t = _world_center(vol) - spacing * half

    rinv = _inv3(vol.affine[:3, :3])
    # input index = rinv @ (world - b); fold the constant part into one offset
    off = _mat3_vec(rinv, t - b)

    idx = np.arange(extent, dtype=np.float64) * spacing
    vx = idx[x_lo:x_hi, None, None]
    vy = idx[None, :, None]
    vz = idx[None, None, :]
    cx = rinv[0, 0] * vx + rinv[0, 1] * vy + rinv[0, 2] * vz + off[0]
    cy = rinv[1, 0] * vx + rinv[1, 1] * vy + rinv[1, 2] * vz + off[1]
    cz = rinv[2, 0] * vx + rinv[2, 1] * vy + rinv[2, 2] * vz + off[2]
    return cx, cy, cz


def _trilinear(data: np.ndarray, cx, cy, cz) -> np.ndarray:
    """Sample ``data`` at fractional coordinates; positions outside the
    closed index box give 0.  Lerp order is fixed: x, then y, then z."""
    nx, ny, nz = data.shape
    inside = (
        (cx >= 0.0) & (cx <= nx - 1)
        & (cy >= 0.0) & (cy <= ny - 1)
        & (cz >= 0.0) & (cz <= nz - 1)
    )
    x = np.where(inside, cx, 0.0)
    y = np.where(inside, cy, 0.0)
    z = np.where(inside, cz, 0.0)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    z0 = np.floor(z).astype(np.int64)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)

    d = data.astype(np.float64, copy=False)
    c000 = d[x0, y0, z0]
    c100 = d[x1, y0, z0]
    c010 = d[x0, y1, z0]
    c110 = d[x1, y1, z0]
    c001 = d[x0, y0, z1]
    c101 = d[x1, y0, z1]
    c011 = d[x0, y1, z1]
    c111 = d[x1, y1, z1]

    gx = 1.0 - fx
    cx00 = c000 * gx + c100 * fx
    cx10 = c010 * gx + c110 * fx
    cx01 = c001 * gx + c101 * fx
    cx11 = c011 * gx + c111 * fx
    gy = 1.0 - fy
    cxy0 = cx00 * gy + cx10 * fy
    cxy1 = cx01 * gy + cx11 * fy
    out = cxy0 * (1.0 - fz) + cxy1 * fz
    return np.where(inside, out, 0.0)


def _nearest(data: np.ndarray, cx, cy, cz) -> np.ndarray:
    nx, ny, nz = data.shape
    inside = (
        (cx >= 0.0) & (cx <= nx - 1)
        & (cy >= 0.0) & (cy <= ny - 1)
        & (cz >= 0.0) & (cz <= nz - 1)
    )
    xi = np.clip(np.floor(np.where(inside, cx, 0.0) + 0.5).astype(np.int64), 0, nx - 1)
    yi = np.clip(np.floor(np.where(inside, cy, 0.0) + 0.5).astype(np.int64), 0, ny - 1)
    zi = np.clip(np.floor(np.where(inside, cz, 0.0) + 0.5).astype(np.int64), 0, nz - 1)
    return np.where(inside, data[xi, yi, zi], 0)


def _percentile_nearest_rank(values: np.ndarray, q: float) -> float:
    """q-th percentile by nearest rank on a full (or 1-in-8 strided) sort."""
    flat = values.reshape(-1)
    if flat.size > _PERCENTILE_SAMPLE_THRESHOLD:
        flat = flat[::8]
    s = np.sort(flat)
    idx = int(math.floor(q / 100.0 * (s.size - 1) + 0.5))
    return float(s[idx])


def robust_rescale(vol: Volume3D, lo_pct: float = 0.0, hi_pct: float = 99.9) -> Volume3D:
    """Map intensities to integers in [0, 255] between robust percentile bounds.

    lo = ``lo_pct`` percentile, hi = ``hi_pct`` percentile; values map through
    round(clamp((v - lo) / (hi - lo), 0, 1) * 255).  A constant volume maps to
    all zeros.  Output values are stored as float32.
    """
    lo = _percentile_nearest_rank(vol.data, lo_pct)
    hi = _percentile_nearest_rank(vol.data, hi_pct)
    if hi == lo:
        return vol.with_data(np.zeros(vol.extents, dtype=np.float32))
    v = vol.data.astype(np.float64, copy=False)
    r = (v - lo) / (hi - lo)
    r = np.clip(r, 0.0, 1.0)
    out = np.floor(r * 255.0 + 0.5)
    return vol.with_data(out.astype(np.float32))


def _resample_transform(vol: Volume3D, extent: int, spacing: float):
    """(rinv, off) mapping output voxel world positions into input indices."""
    b = vol.affine[:3, 3]
    half = (extent - 1) / 2.0
    t = _world_center(vol) - spacing * half
    rinv = _inv3(vol.affine[:3, :3])
    off = _mat3_vec(rinv, t - b)
    return rinv, off, t


def _resample_to_grid(vol: Volume3D, extent: int, spacing: float,
                      label: bool) -> Volume3D:
    """Resample onto an axis-aligned extent^3 grid centered on the input's
    world center; trilinear for intensities, nearest-neighbor for labels."""
    from . import _kernels

    rinv, off, origin = _resample_transform(vol, extent, spacing)
    if label:
        out = np.empty((extent, extent, extent), dtype=vol.data.dtype)
        _kernels.nearest_resample(np.ascontiguousarray(vol.data), rinv, off,
                                  float(spacing), out)
    else:
        out = np.empty((extent, extent, extent), dtype=np.float64)
        _kernels.trilinear_resample(np.ascontiguousarray(vol.data), rinv, off,
                                    float(spacing), out)
    out_affine = identity_affine((spacing,) * 3, tuple(origin))
    return Volume3D(out, (spacing,) * 3, out_affine)


def conform(vol: Volume3D, label: bool = False,
            lo_pct: float = 0.0, hi_pct: float = 99.9) -> Volume3D:
    """Resample onto the canonical 256^3 grid at 1 mm isotropic spacing.

    Intensity volumes are trilinearly interpolated and then rescaled with
    ``robust_rescale``; label volumes use nearest-neighbor and keep their
    values.  Out-of-field samples are 0.
    """
    out = _resample_to_grid(vol, CONFORM_EXTENT, CONFORM_SPACING, label)
    if label:
        return out
    return robust_rescale(out, lo_pct, hi_pct)


def mask_bbox(mask: Volume3D, margin: int = 0) -> BoundingBox:
    """Tight box around nonzero voxels, grown by ``margin`` and clamped."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    nz_idx = np.nonzero(mask.data)
    if nz_idx[0].size == 0:
        raise EmptyMask("mask has no nonzero voxel")
    lows = []
    highs = []
    for axis, coords in enumerate(nz_idx):
        lows.append(max(int(coords.min()) - margin, 0))
        highs.append(min(int(coords.max()) + margin, mask.extents[axis] - 1))
    return BoundingBox(tuple(lows), tuple(highs))


def _check_box(box: BoundingBox, extents: tuple[int, int, int]):
    if any(a < 0 for a in box.min) or any(b >= n for b, n in zip(box.max, extents)):
        raise BoxOutOfRange(f"box {box.min}..{box.max} outside extents {extents}")


def crop(vol: Volume3D, box: BoundingBox) -> Volume3D:
    """Copy the boxed region; the affine keeps world coordinates aligned."""
    _check_box(box, vol.extents)
    (x0, y0, z0), (x1, y1, z1) = box.min, box.max
    data = vol.data[x0:x1 + 1, y0:y1 + 1, z0:z1 + 1].copy()
    affine = vol.affine.copy()
    affine[:3, 3] += vol.affine[:3, :3] @ np.array([x0, y0, z0], dtype=np.float64)
    return Volume3D(data, vol.spacing, affine)


def embed(vol: Volume3D, box: BoundingBox, target_extents: tuple[int, int, int]) -> Volume3D:
    """Place a cropped volume back at ``box`` inside a zero background."""
    _check_box(box, target_extents)
    if vol.extents != box.extents:
        raise BoxOutOfRange(
            f"volume extents {vol.extents} do not match box extents {box.extents}")
    data = np.zeros(target_extents, dtype=vol.data.dtype)
    (x0, y0, z0), (x1, y1, z1) = box.min, box.max
    data[x0:x1 + 1, y0:y1 + 1, z0:z1 + 1] = vol.data
    affine = vol.affine.copy()
    affine[:3, 3] -= vol.affine[:3, :3] @ np.array([x0, y0, z0], dtype=np.float64)
    return Volume3D(data, vol.spacing, affine)
