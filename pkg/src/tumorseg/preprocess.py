"""Brain-region cropping, foreground z-score normalization, and restoration.

Background is defined as voxels that are exactly zero in all four channels
(skull-stripped scans); the foreground mask is computed once on the raw
input and carried through normalization rather than recomputed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import BoxOutOfBounds, EmptyForeground, ShapeMismatch
from .volgrid import CropBox, LabelMap, MultimodalVolume

log = logging.getLogger(__name__)

DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel foreground mean/std used for the z-score."""

    mean: float
    std: float
    foreground_count: int

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"std must be >= 0, got {self.std}")
        if self.foreground_count < 1:
            raise ValueError("foreground_count must be >= 1")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "foreground_count": self.foreground_count}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(float(d["mean"]), float(d["std"]), int(d["foreground_count"]))


def foreground_mask(vol: MultimodalVolume) -> np.ndarray:
    """Union of per-channel nonzero support."""
    return (vol.data != 0).any(axis=0)


def compute_foreground_box(vol: MultimodalVolume) -> CropBox:
    """Tightest box containing every voxel that is nonzero in any channel."""
    mask = foreground_mask(vol)
    if not mask.any():
        raise EmptyForeground("volume is zero in all channels")
    lo, hi = [], []
    for axis in range(3):
        others = tuple(a for a in range(3) if a != axis)
        line = mask.any(axis=others)
        nz = np.flatnonzero(line)
        lo.append(int(nz[0]))
        hi.append(int(nz[-1]) + 1)
    return CropBox(tuple(lo), tuple(hi), vol.shape)


def crop(vol: MultimodalVolume, box: CropBox) -> MultimodalVolume:
    """Extract the boxed region; the affine is translated so world coordinates hold."""
    shape = vol.shape.as_tuple()
    for a in range(3):
        if box.hi[a] > shape[a]:
            raise BoxOutOfBounds(f"axis {a}: box hi {box.hi[a]} exceeds volume dim {shape[a]}")
    affine = np.array(vol.affine)
    affine[:3, 3] += affine[:3, :3] @ np.asarray(box.lo, dtype=np.float64)
    data = vol.data[(slice(None),) + box.slices()]
    return MultimodalVolume(data, affine, vol.channel_names)


def normalize(
    vol: MultimodalVolume, mask: np.ndarray | None = None
) -> tuple[MultimodalVolume, list[NormalizationStats]]:
    """Z-score each channel over the foreground; background stays exactly 0.

    Channels whose foreground std falls below 1e-8 are zeroed entirely
    (degenerate contrast) with a warning. Pass `mask` to reuse a mask
    computed earlier in the pipeline instead of deriving it again.
    """
    if mask is None:
        mask = foreground_mask(vol)
    if mask.shape != vol.shape.as_tuple():
        raise ShapeMismatch(f"mask shape {mask.shape} != volume shape {vol.shape.as_tuple()}")
    if not mask.any():
        raise EmptyForeground("cannot normalize a volume with no foreground voxels")

    means, stds, count = _accel.masked_mean_std(vol.data, mask)
    for c, name in enumerate(vol.channel_names):
        if stds[c] < DEGENERATE_STD:
            log.warning("channel %s has degenerate foreground std (%g); zeroing it", name, stds[c])
    out = _accel.zscore_channels(vol.data, mask, means, stds)
    stats = [
        NormalizationStats(float(means[c]), float(stds[c]), count)
        for c in range(len(vol.channel_names))
    ]
    return vol.with_data(out), stats


def restore(pred: LabelMap, box: CropBox) -> LabelMap:
    """Place a cropped-space label map back into the original volume geometry."""
    if pred.shape.as_tuple() != box.extents():
        raise ShapeMismatch(
            f"prediction shape {pred.shape.as_tuple()} != crop extents {box.extents()}"
        )
    full = np.zeros(box.original_shape.as_tuple(), dtype=np.uint8)
    full[box.slices()] = pred.data
    affine = np.array(pred.affine)
    affine[:3, 3] -= affine[:3, :3] @ np.asarray(box.lo, dtype=np.float64)
    return LabelMap(full, affine)
