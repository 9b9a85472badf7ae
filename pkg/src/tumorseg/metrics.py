"""Dice and 95th-percentile Hausdorff distance between label maps.

Regions are derived from discrete labels as ET={3}, TC={1,3}, WT={1,2,3},
so derived masks always satisfy ET <= TC <= WT. Surface voxels are
foreground voxels with at least one 6-neighbor outside the mask (voxels on
the grid edge count). HD95 pools the two directed surface-distance sets and
takes the 95th percentile with linear interpolation.

Empty-mask conventions (not measurable quantities, hence configurable):
both masks empty gives dice 1.0 / hd95 0.0; exactly one empty gives dice 0.0
and the hd95 penalty constant (373.13 by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ShapeMismatch
from .volgrid import LabelMap

REGIONS = ("ET", "TC", "WT")
REGION_LABELS = {"ET": (3,), "TC": (1, 3), "WT": (1, 2, 3)}

DEFAULT_EMPTY_PENALTY = 373.13


def region_mask(labels: np.ndarray, region: str) -> np.ndarray:
    """Binary mask of one tumor region derived from discrete labels."""
    return np.isin(labels, REGION_LABELS[region])


@dataclass(frozen=True)
class CaseScore:
    """Per-region dice/hd95 plus arithmetic means across the three regions."""

    dice: dict[str, float]
    hd95: dict[str, float]

    @property
    def dice_avg(self) -> float:
        return sum(self.dice[r] for r in REGIONS) / len(REGIONS)

    @property
    def hd95_avg(self) -> float:
        return sum(self.hd95[r] for r in REGIONS) / len(REGIONS)

    def to_dict(self) -> dict:
        d = {f"dice_{r.lower()}": self.dice[r] for r in REGIONS}
        d.update({f"hd95_{r.lower()}": self.hd95[r] for r in REGIONS})
        d["dice_avg"] = self.dice_avg
        d["hd95_avg"] = self.hd95_avg
        return d


def _check_same_shape(pred: np.ndarray, ref: np.ndarray) -> None:
    if pred.shape != ref.shape:
        raise ShapeMismatch(f"pred shape {pred.shape} != ref shape {ref.shape}")


def dice(pred: np.ndarray, ref: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|); both empty -> 1.0, exactly one empty -> 0.0."""
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    _check_same_shape(pred, ref)
    p = int(pred.sum())
    r = int(ref.sum())
    if p + r == 0:
        return 1.0
    return 2.0 * int((pred & ref).sum()) / (p + r)


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbor outside the mask or on the grid edge."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1, 1:-1] & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1] & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2] & padded[1:-1, 1:-1, 2:]
    )
    return mask & ~interior


def surface_distances(pred: np.ndarray, ref: np.ndarray, spacing) -> np.ndarray:
    """Distances from each pred-boundary voxel to the nearest ref-boundary voxel."""
    ref_boundary = boundary_mask(ref)
    dist = _accel.feature_edt(ref_boundary, spacing)
    return dist[boundary_mask(pred)]


def hd95(
    pred: np.ndarray,
    ref: np.ndarray,
    spacing=(1.0, 1.0, 1.0),
    empty_penalty: float = DEFAULT_EMPTY_PENALTY,
) -> float:
    """95th percentile of the pooled symmetric surface-distance set."""
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    _check_same_shape(pred, ref)
    p_empty = not pred.any()
    r_empty = not ref.any()
    if p_empty and r_empty:
        return 0.0
    if p_empty or r_empty:
        return float(empty_penalty)
    pooled = np.concatenate(
        [surface_distances(pred, ref, spacing), surface_distances(ref, pred, spacing)]
    )
    return float(np.percentile(pooled, 95))


def score_case(
    pred: LabelMap,
    ref: LabelMap,
    spacing=(1.0, 1.0, 1.0),
    empty_penalty: float = DEFAULT_EMPTY_PENALTY,
) -> CaseScore:
    """Per-region dice and hd95 for one predicted/reference label-map pair."""
    _check_same_shape(pred.data, ref.data)
    dices, hds = {}, {}
    for region in REGIONS:
        pm = region_mask(pred.data, region)
        rm = region_mask(ref.data, region)
        dices[region] = dice(pm, rm)
        hds[region] = hd95(pm, rm, spacing, empty_penalty)
    return CaseScore(dice=dices, hd95=hds)
