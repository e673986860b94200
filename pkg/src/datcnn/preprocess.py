"""Spatial and intensity normalization of volumes.

Volumes are float32 arrays laid out (D, H, W); voxel coordinates are
addressed as (x, y, z) = (W-index, H-index, D-index) when applying affine
transforms. Intensity statistics are accumulated in float64.

A preprocessing combination is named by a pipeline tag ``<intensity>_<spatial>``
with intensity in {no, int, max} and spatial in {u, w}: ``u`` leaves the
volume in its native space, ``w`` resamples it through a supplied affine
registration matrix before the intensity step.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensor import assert_finite

INTENSITY_KINDS = ("no", "int", "max")
SPATIAL_KINDS = ("u", "w")
DEFAULT_TOP_FRACTION = 0.03


@dataclass(frozen=True)
class PipelineTag:
    intensity: str
    spatial: str

    def __post_init__(self):
        if self.intensity not in INTENSITY_KINDS or self.spatial not in SPATIAL_KINDS:
            raise DataError(f"malformed pipeline tag {self.render()!r}")

    def render(self):
        return f"{self.intensity}_{self.spatial}"

    @classmethod
    def parse(cls, text):
        parts = str(text).split("_")
        if len(parts) != 2:
            raise DataError(f"malformed pipeline tag {text!r}")
        return cls(parts[0], parts[1])


# ---------------------------------------------------------------------------
# intensity normalization


def normalize_max(vol, top_fraction=DEFAULT_TOP_FRACTION):
    """Divide by the mean of the top-fraction largest voxels.

    The divisor averages the ceil(top_fraction * count) highest intensities
    so a single hot voxel cannot dominate; recomputing the same statistic on
    the output yields one.
    """
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    vol = np.asarray(vol)
    if vol.size == 0:
        raise ValueError("empty volume")
    k = math.ceil(top_fraction * vol.size)
    flat = vol.reshape(-1).astype(np.float64)
    top = np.partition(flat, vol.size - k)[vol.size - k:]
    divisor = top.mean()
    if divisor == 0.0:
        raise DataError("cannot normalize an all-zero volume")
    out = (flat / divisor).reshape(vol.shape).astype(np.float32)
    assert_finite(out, "max-normalized volume")
    return out


def top_fraction_mean(vol, top_fraction=DEFAULT_TOP_FRACTION):
    """The statistic normalize_max divides by, for checking its contract."""
    vol = np.asarray(vol)
    k = math.ceil(top_fraction * vol.size)
    flat = vol.reshape(-1).astype(np.float64)
    return float(np.partition(flat, vol.size - k)[vol.size - k:].mean())


def normalize_integral(vol):
    """Divide by the whole-volume mean, so the output mean equals one."""
    vol = np.asarray(vol)
    if vol.size == 0:
        raise ValueError("empty volume")
    mean = float(vol.mean(dtype=np.float64))
    if mean == 0.0:
        raise DataError("cannot normalize a zero-mean volume")
    out = (vol.astype(np.float64) / mean).astype(np.float32)
    assert_finite(out, "integral-normalized volume")
    return out


# ---------------------------------------------------------------------------
# affine resampling


def validate_affine(a):
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (4, 4):
        raise ValueError("affine matrix must be 4x4")
    if not np.array_equal(a[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValueError("last affine row must be (0, 0, 0, 1)")
    if np.linalg.det(a[:3, :3]) == 0.0:
        raise DataError("singular affine matrix")
    return a


def make_similarity(scale=1.0, angles_deg=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
    """Similarity transform T @ Rz @ Ry @ Rx @ S as a 4x4 homogeneous matrix.

    Angles are degrees about the (x, y, z) axes applied in x, then y, then z
    order; the determinant of the 3x3 block equals scale**3.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    ax, ay, az = (math.radians(a) for a in angles_deg)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    a = np.eye(4)
    a[:3, :3] = rz @ ry @ rx * scale
    a[:3, 3] = np.asarray(translation, dtype=np.float64)
    return a


def affine_resample(vol, matrix, out_shape=None):
    """Resample a volume through an affine transform with trilinear weights.

    Each output voxel at coordinate c' takes the input value interpolated at
    inverse(matrix) @ c'; samples that fall outside the input contribute
    zero (background in nuclear images is air).
    """
    vol = np.asarray(vol)
    a = validate_affine(matrix)
    if out_shape is None:
        out_shape = vol.shape
    dz, dy, dx = out_shape
    inv = np.linalg.inv(a)

    zo, yo, xo = np.indices((dz, dy, dx), dtype=np.float64)
    coords = np.stack([xo.ravel(), yo.ravel(), zo.ravel(),
                       np.ones(dz * dy * dx)])
    xs, ys, zs = (inv @ coords)[:3]
    return _trilinear(vol, xs, ys, zs).reshape(out_shape)


def _trilinear(vol, xs, ys, zs):
    """Interpolate vol (D, H, W) at fractional (x, y, z) sample positions."""
    d, h, w = vol.shape
    v = vol.astype(np.float64, copy=False)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    z0 = np.floor(zs)
    fx, fy, fz = xs - x0, ys - y0, zs - z0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    z0 = z0.astype(np.intp)

    out = np.zeros(xs.shape, dtype=np.float64)
    for dzc in (0, 1):
        wz = fz if dzc else 1.0 - fz
        zi = z0 + dzc
        for dyc in (0, 1):
            wy = fy if dyc else 1.0 - fy
            yi = y0 + dyc
            for dxc in (0, 1):
                wx = fx if dxc else 1.0 - fx
                xi = x0 + dxc
                inside = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                          & (zi >= 0) & (zi < d))
                weight = wx * wy * wz
                if not inside.any():
                    continue
                vals = v[zi[inside], yi[inside], xi[inside]]
                out[inside] += weight[inside] * vals
    return out.astype(np.float32)


def resample_to_shape(vol, target_shape):
    """Scale-only resample of a volume onto the target (D, H, W) shape."""
    vol = np.asarray(vol)
    if tuple(vol.shape) == tuple(target_shape):
        return affine_resample(vol, np.eye(4))
    a = np.eye(4)
    # per-axis output/input ratio; sampling at c' * in/out
    for axis, (outext, inext) in enumerate(zip(target_shape[::-1], vol.shape[::-1])):
        a[axis, axis] = outext / inext
    return affine_resample(vol, a, target_shape)


def apply_pipeline(vol, tag, transform=None, top_fraction=DEFAULT_TOP_FRACTION):
    """Run the spatial step (if 'w') then the intensity step (if not 'no')."""
    if isinstance(tag, str):
        tag = PipelineTag.parse(tag)
    out = np.asarray(vol)
    if tag.spatial == "w":
        if transform is None:
            raise ValueError("spatial normalization 'w' requires an affine matrix")
        out = affine_resample(out, transform, out.shape)
    if tag.intensity == "int":
        out = normalize_integral(out)
    elif tag.intensity == "max":
        out = normalize_max(out, top_fraction)
    return out.astype(np.float32, copy=False)
