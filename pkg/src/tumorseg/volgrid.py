"""Core 3D grid types and axis flips shared by every pipeline stage.

Array convention
----------------
Multi-channel grids are numpy arrays indexed ``[channel, x, y, z]``; the
channel axis is the major (outermost) one. The spatial indices (x, y, z)
are the voxel indices of the source scan, so the 4x4 affine maps a voxel
as ``world = affine @ (x, y, z, 1)``. On disk (NIfTI, probability grids)
the spatial block of each channel is written x-fastest / z-slowest, the
NIfTI-native order.

Grid objects are immutable after construction: their arrays are marked
read-only and every operation returns a new value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MODALITY_NAMES = ("T1", "T1Gd", "T2", "T2-FLAIR")
TUMOR_CHANNELS = ("TC", "WT", "ET")

LABEL_BACKGROUND = 0
LABEL_TC_ONLY = 1
LABEL_EDEMA = 2
LABEL_ET = 3

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, order=True)
class GridShape:
    """Voxel counts per axis of a 3D grid."""

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for name, n in (("nx", self.nx), ("ny", self.ny), ("nz", self.nz)):
            if int(n) < 1:
                raise ValueError(f"GridShape.{name} must be >= 1, got {n}")

    @classmethod
    def of(cls, dims: Sequence[int]) -> "GridShape":
        if len(dims) != 3:
            raise ValueError(f"expected 3 dimensions, got {len(dims)}")
        return cls(int(dims[0]), int(dims[1]), int(dims[2]))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    def voxel_count(self) -> int:
        return self.nx * self.ny * self.nz


# the canonical scan geometry of the target data distribution
CANONICAL_SCAN_SHAPE = GridShape(240, 240, 155)


def _freeze(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


def _check_affine(affine) -> np.ndarray:
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise ValueError(f"affine must be 4x4, got {affine.shape}")
    if not np.array_equal(affine[3], (0.0, 0.0, 0.0, 1.0)):
        raise ValueError(f"affine last row must be (0,0,0,1), got {affine[3]}")
    return affine


class MultimodalVolume:
    """A 4-channel scalar grid (T1, T1Gd, T2, T2-FLAIR) plus spatial metadata."""

    def __init__(self, data, affine=None, channel_names: Sequence[str] = MODALITY_NAMES):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 4 or data.shape[0] != 4:
            raise ValueError(f"expected (4, nx, ny, nz) data, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume contains NaN or Inf voxels")
        if len(channel_names) != 4:
            raise ValueError("expected 4 channel names")
        self.data = _freeze(data)
        self.affine = _freeze(_check_affine(np.eye(4) if affine is None else affine))
        self.channel_names = tuple(channel_names)

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.data.shape[1:])

    def with_data(self, data) -> "MultimodalVolume":
        """New volume with replaced voxel data, same affine and channel names."""
        return MultimodalVolume(data, self.affine, self.channel_names)


class ProbabilityMap:
    """A 3-channel grid of per-voxel tumor probabilities (TC, WT, ET) in [0, 1]."""

    def __init__(self, data, channel_names: Sequence[str] = TUMOR_CHANNELS):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"expected (3, nx, ny, nz) data, got shape {data.shape}")
        lo, hi = float(data.min()), float(data.max())
        if not (0.0 <= lo and hi <= 1.0):
            raise ValueError(f"probabilities must lie in [0,1], found range [{lo}, {hi}]")
        if len(channel_names) != 3:
            raise ValueError("expected 3 channel names")
        self.data = _freeze(data)
        self.channel_names = tuple(channel_names)

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.data.shape[1:])

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.channel_names.index(name)]


class LabelMap:
    """Single-channel grid of discrete labels {0 bg, 1 TC-only, 2 edema, 3 ET}."""

    def __init__(self, data, affine=None):
        data = np.ascontiguousarray(data, dtype=np.uint8)
        if data.ndim != 3:
            raise ValueError(f"expected (nx, ny, nz) labels, got shape {data.shape}")
        if data.max(initial=0) > 3:
            raise ValueError(f"labels must be in {{0,1,2,3}}, max found {data.max()}")
        self.data = _freeze(data)
        self.affine = _freeze(_check_affine(np.eye(4) if affine is None else affine))

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.data.shape)


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned inclusive-exclusive box recording a crop for later restoration."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    original_shape: GridShape

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        orig = self.original_shape.as_tuple()
        for a in range(3):
            if not (0 <= self.lo[a] < self.hi[a] <= orig[a]):
                raise ValueError(
                    f"axis {a}: need 0 <= lo < hi <= {orig[a]}, got [{self.lo[a]}, {self.hi[a]})"
                )

    def extents(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi),
                "original_shape": list(self.original_shape.as_tuple())}

    @classmethod
    def from_dict(cls, d: dict) -> "CropBox":
        return cls(tuple(d["lo"]), tuple(d["hi"]), GridShape.of(d["original_shape"]))


def spatial_axes(axes: Iterable[str]) -> tuple[int, ...]:
    """Translate axis names {x,y,z} to spatial indices, deduplicated and sorted."""
    idx = set()
    for a in axes:
        if a not in _AXIS_INDEX:
            raise ValueError(f"unknown axis {a!r}, expected x/y/z")
        idx.add(_AXIS_INDEX[a])
    return tuple(sorted(idx))


def flip_array(data: np.ndarray, axes: Iterable[str], spatial_offset: int = 1) -> np.ndarray:
    """Reverse `data` along each named spatial axis; contiguous copy."""
    idx = tuple(a + spatial_offset for a in spatial_axes(axes))
    if not idx:
        return np.ascontiguousarray(data)
    return np.ascontiguousarray(np.flip(data, axis=idx))


def flip(grid, axes: Iterable[str]):
    """Flip a MultimodalVolume or ProbabilityMap along a subset of {x,y,z}.

    Exact involution: flip(flip(g, S), S) is bit-identical to g.
    """
    if isinstance(grid, MultimodalVolume):
        return MultimodalVolume(flip_array(grid.data, axes), grid.affine, grid.channel_names)
    if isinstance(grid, ProbabilityMap):
        return ProbabilityMap(flip_array(grid.data, axes), grid.channel_names)
    raise TypeError(f"cannot flip {type(grid).__name__}")
