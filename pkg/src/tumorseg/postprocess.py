"""Probability maps to final label maps: threshold, component filtering, fusion.

Per channel (TC, WT, ET): binarize at the channel threshold, label connected
components under the configured 3D neighborhood, drop components that are too
small or whose mean probability (measured on the pre-threshold map) is too
low, then fuse the three surviving masks into one discrete label map with
precedence ET > TC > WT.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _accel
from .errors import ShapeMismatch
from .volgrid import CropBox, GridShape, LabelMap, ProbabilityMap, TUMOR_CHANNELS

CONNECTIVITIES = (6, 18, 26)

# paper-default filter sizes, keyed like the probability channels (TC, WT, ET)
DEFAULT_THRESHOLDS = (0.5, 0.5, 0.5)
DEFAULT_MIN_SIZES = (150, 500, 100)
DEFAULT_MIN_MEANS = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PostprocessParams:
    """Per-channel filtering parameters, ordered like (TC, WT, ET)."""

    thresholds: tuple[float, float, float] = DEFAULT_THRESHOLDS
    min_component_sizes: tuple[int, int, int] = DEFAULT_MIN_SIZES
    min_mean_probabilities: tuple[float, float, float] = DEFAULT_MIN_MEANS
    connectivity: int = 26

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(
            self, "min_component_sizes", tuple(int(s) for s in self.min_component_sizes)
        )
        object.__setattr__(
            self, "min_mean_probabilities",
            tuple(float(m) for m in self.min_mean_probabilities),
        )
        for t in self.thresholds:
            if not 0.0 < t < 1.0:
                raise ValueError(f"thresholds must lie in (0,1), got {t}")
        for s in self.min_component_sizes:
            if s < 0:
                raise ValueError(f"min component sizes must be >= 0, got {s}")
        for m in self.min_mean_probabilities:
            if not 0.0 <= m <= 1.0:
                raise ValueError(f"min mean probabilities must lie in [0,1], got {m}")
        if self.connectivity not in CONNECTIVITIES:
            raise ValueError(f"connectivity must be one of {CONNECTIVITIES}")

    def for_channel(self, name: str) -> tuple[float, int, float]:
        i = TUMOR_CHANNELS.index(name)
        return (self.thresholds[i], self.min_component_sizes[i], self.min_mean_probabilities[i])

    def to_dict(self) -> dict:
        d = {"connectivity": self.connectivity}
        for i, name in enumerate(TUMOR_CHANNELS):
            key = name.lower()
            d[f"threshold_{key}"] = self.thresholds[i]
            d[f"min_size_{key}"] = self.min_component_sizes[i]
            d[f"min_mean_{key}"] = self.min_mean_probabilities[i]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PostprocessParams":
        base = cls()
        thresholds = list(base.thresholds)
        sizes = list(base.min_component_sizes)
        means = list(base.min_mean_probabilities)
        connectivity = d.get("connectivity", base.connectivity)
        for i, name in enumerate(TUMOR_CHANNELS):
            key = name.lower()
            thresholds[i] = d.get(f"threshold_{key}", thresholds[i])
            sizes[i] = d.get(f"min_size_{key}", sizes[i])
            means[i] = d.get(f"min_mean_{key}", means[i])
        return cls(tuple(thresholds), tuple(sizes), tuple(means), int(connectivity))


@dataclass(frozen=True)
class ComponentRecord:
    """Audit entry for one connected component of one channel."""

    channel: str
    id: int
    size: int
    mean_probability: float
    bounding_box: CropBox
    kept: bool = True

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "id": self.id,
            "size": self.size,
            "mean_probability": self.mean_probability,
            "bounding_box": self.bounding_box.to_dict(),
            "kept": self.kept,
        }


def binarize(pm: ProbabilityMap, params: PostprocessParams) -> np.ndarray:
    """Boolean (3, nx, ny, nz) mask; a voxel is on iff probability >= threshold."""
    thr = np.asarray(params.thresholds, dtype=np.float32).reshape(3, 1, 1, 1)
    return pm.data >= thr


def connected_components(
    mask: np.ndarray,
    connectivity: int = 26,
    probabilities: np.ndarray | None = None,
    channel: str = "",
) -> tuple[np.ndarray, list[ComponentRecord]]:
    """Label the clusters of a 3D boolean mask.

    Returns (labels, records): labels is int32 with components numbered
    1..K in raster order of first occurrence; each record carries the size,
    bounding box, and mean probability (over the given probability grid, or
    of the binary mask itself when none is given).
    """
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ShapeMismatch(f"expected a 3D mask, got shape {mask.shape}")
    labels, count = _accel.label_components(mask, connectivity)
    probs = mask.astype(np.float32) if probabilities is None else probabilities
    if probs.shape != mask.shape:
        raise ShapeMismatch(f"probability shape {probs.shape} != mask shape {mask.shape}")
    sizes, means, boxes = _accel.component_stats(labels, count, probs)
    shape = GridShape.of(mask.shape)
    records = [
        ComponentRecord(
            channel=channel,
            id=i,
            size=int(sizes[i]),
            mean_probability=float(means[i]),
            bounding_box=CropBox(tuple(boxes[i, :3]), tuple(boxes[i, 3:]), shape),
        )
        for i in range(1, count + 1)
    ]
    return labels, records


def filter_components(
    labels: np.ndarray,
    records: Sequence[ComponentRecord],
    min_size: int,
    min_mean_probability: float,
) -> tuple[np.ndarray, list[ComponentRecord]]:
    """Keep components with size >= min_size and mean prob >= min_mean_probability.

    Returns the filtered boolean mask and records with their kept flags set.
    Never adds voxels: the output mask is a subset of the labeled voxels.
    """
    lut = np.zeros(len(records) + 1, dtype=bool)
    updated = []
    for rec in records:
        keep = rec.size >= min_size and rec.mean_probability >= min_mean_probability
        lut[rec.id] = keep
        updated.append(replace(rec, kept=keep))
    return lut[labels], updated


def fuse_labels(tc: np.ndarray, wt: np.ndarray, et: np.ndarray, affine=None) -> LabelMap:
    """Fuse binary region masks into {0,1,2,3} labels with precedence ET > TC > WT.

    Region masks re-derived from the result (ET={3}, TC={1,3}, WT={1,2,3})
    always satisfy ET <= TC <= WT, whatever the inputs.
    """
    if not (tc.shape == wt.shape == et.shape):
        raise ShapeMismatch(f"mask shapes differ: {tc.shape}, {wt.shape}, {et.shape}")
    out = np.zeros(tc.shape, dtype=np.uint8)
    out[np.asarray(wt, bool)] = 2
    out[np.asarray(tc, bool)] = 1
    out[np.asarray(et, bool)] = 3
    return LabelMap(out, affine)


def postprocess(
    pm: ProbabilityMap, params: PostprocessParams = PostprocessParams(), affine=None
) -> tuple[LabelMap, list[ComponentRecord]]:
    """Full chain: binarize -> per-channel components -> filter -> fuse."""
    masks = binarize(pm, params)
    filtered = {}
    all_records: list[ComponentRecord] = []
    for i, name in enumerate(TUMOR_CHANNELS):
        threshold, min_size, min_mean = params.for_channel(name)
        labels, records = connected_components(
            masks[i], params.connectivity, probabilities=pm.data[i], channel=name
        )
        mask, records = filter_components(labels, records, min_size, min_mean)
        filtered[name] = mask
        all_records.extend(records)
    label_map = fuse_labels(filtered["TC"], filtered["WT"], filtered["ET"], affine)
    return label_map, all_records
