"""Volume, mask and geometry primitives.

Arrays are indexed ``[x, y, z]``. Whenever voxels are flattened (file payloads,
linear voxel ids) the order is x-fastest, i.e. numpy ``order="F"``.

Masks are plain ``uint8`` arrays: binary masks hold {0, 1}, trinary masks hold
{0, 1, 2} = {negative, positive, unlabeled}.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DimsMismatch, DimsTooSmall, OutOfBounds, ZeroVariance

Voxel = Tuple[int, int, int]

NEGATIVE, POSITIVE, UNLABELED = 0, 1, 2


@dataclass
class Volume3D:
    """Scalar field on a voxel grid with spacing in mm."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data) -> "Volume3D":
        return Volume3D(data, self.spacing)


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive voxel box ``lower <= (x, y, z) <= upper``."""

    lower: Voxel
    upper: Voxel

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"bbox lower {self.lower} exceeds upper {self.upper}")

    @property
    def slices(self):
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.lower, self.upper))

    def contains(self, p: Sequence[int]) -> bool:
        return all(lo <= c <= hi for c, lo, hi in zip(p, self.lower, self.upper))

    def mask(self, dims) -> np.ndarray:
        m = np.zeros(dims, dtype=np.uint8)
        m[self.slices] = 1
        return m


_EXTREME_KEYS = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


@dataclass(frozen=True)
class ExtremePoints:
    """The six outermost voxels of a lesion along -x, +x, -y, +y, -z, +z."""

    xmin: Voxel
    xmax: Voxel
    ymin: Voxel
    ymax: Voxel
    zmin: Voxel
    zmax: Voxel

    def __post_init__(self):
        for key in _EXTREME_KEYS:
            object.__setattr__(self, key, tuple(int(c) for c in getattr(self, key)))
        for axis, (lo, hi) in enumerate(self.pairs()):
            if lo[axis] > hi[axis]:
                raise ValueError(f"extreme points inverted along axis {axis}: {lo} > {hi}")

    def points(self) -> Iterator[Voxel]:
        for key in _EXTREME_KEYS:
            yield getattr(self, key)

    def pairs(self):
        return [(self.xmin, self.xmax), (self.ymin, self.ymax), (self.zmin, self.zmax)]

    def check_inside(self, dims) -> None:
        for p in self.points():
            check_voxel(p, dims)

    def to_dict(self) -> dict:
        return {key: list(getattr(self, key)) for key in _EXTREME_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtremePoints":
        return cls(**{key: tuple(d[key]) for key in _EXTREME_KEYS})


def check_voxel(p: Sequence[int], dims) -> Voxel:
    p = tuple(int(c) for c in p)
    if len(p) != 3 or any(c < 0 or c >= n for c, n in zip(p, dims)):
        raise OutOfBounds(f"voxel {p} outside dims {tuple(dims)}")
    return p


def linear_index(p: Sequence[int], dims) -> int:
    """x-fastest linear id of voxel ``p``."""
    x, y, z = p
    return int(x + dims[0] * (y + dims[1] * z))


def check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise DimsMismatch(f"dims differ: {np.shape(a)} vs {np.shape(b)}")


def check_mask(m, allowed=(0, 1)) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {m.shape}")
    if m.size and not np.isin(m, allowed).all():
        raise ValueError(f"mask values must lie in {allowed}")
    return m.astype(np.uint8, copy=False)


def normalize(v: Volume3D) -> Volume3D:
    """Zero mean, unit (population) variance; statistics in float64."""
    data = v.data.astype(np.float64)
    if data.size < 2:
        raise ZeroVariance("need at least two voxels to normalize")
    mean = data.mean()
    std = data.std()
    if std == 0.0 or not np.isfinite(std):
        raise ZeroVariance("volume has zero variance")
    out = (data - mean) / std
    # one correction pass removes the residual rounding in the mean
    out -= out.mean()
    return v.with_data(out)


def gradient_magnitude(v: Volume3D) -> Volume3D:
    """Central differences inside, one-sided at faces, scaled by spacing."""
    if any(n < 2 for n in v.dims):
        raise DimsTooSmall(f"gradient needs >= 2 voxels per axis, got {v.dims}")
    gx, gy, gz = np.gradient(v.data.astype(np.float64), *v.spacing)
    return v.with_data(np.sqrt(gx * gx + gy * gy + gz * gz))


_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def dilate(m, iterations: int = 1) -> np.ndarray:
    """Binary dilation with the face-adjacent (6-connected) element."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    m = check_mask(m)
    out = ndimage.binary_dilation(m.astype(bool), structure=_SIX_CONNECTED, iterations=iterations)
    return out.astype(np.uint8)


def bbox_from_extremes(e: ExtremePoints) -> BoundingBox:
    pts = np.array(list(e.points()))
    return BoundingBox(tuple(int(c) for c in pts.min(axis=0)), tuple(int(c) for c in pts.max(axis=0)))


def bbox_of_mask(m) -> BoundingBox:
    """Tight bounding box of the nonzero voxels of ``m``."""
    idx = np.argwhere(np.asarray(m) > 0)
    if idx.size == 0:
        raise ValueError("mask is empty")
    return BoundingBox(tuple(int(c) for c in idx.min(axis=0)), tuple(int(c) for c in idx.max(axis=0)))
