"""Sliding-window decomposition and weighted blending of patch predictions.

Window placement per axis: starts at multiples of the stride
ceil(patch * (1 - overlap)), with the final start clamped so the last
window ends flush at the volume boundary. Volumes smaller than the patch
are zero-padded symmetrically; the padding is recorded in the plan and
stripped after blending.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from typing import Callable, Iterable

import numpy as np

from .errors import InvalidOverlap, MissingWindowOutput, ShapeMismatch
from .volgrid import GridShape, ProbabilityMap

BLEND_MODES = ("gaussian", "uniform")
GAUSSIAN_SIGMA_SCALE = 1.0 / 8.0
GAUSSIAN_WEIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class WindowPlan:
    """Full placement of patch windows over a (possibly padded) volume."""

    volume_shape: GridShape
    padded_shape: GridShape
    pad_lo: tuple[int, int, int]
    patch_shape: GridShape
    overlap: float
    starts: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    blend_mode: str = "gaussian"

    def windows(self) -> list[tuple[int, int, int]]:
        """Window start corners in padded-volume coordinates, raster order."""
        return list(product(*self.starts))

    def window_count(self) -> int:
        return len(self.starts[0]) * len(self.starts[1]) * len(self.starts[2])

    def with_blend_mode(self, mode: str) -> "WindowPlan":
        return replace(self, blend_mode=mode)


def _axis_starts(dim: int, patch: int, stride: int) -> tuple[int, ...]:
    starts = []
    k = 0
    while k * stride + patch < dim:
        starts.append(k * stride)
        k += 1
    starts.append(dim - patch)
    return tuple(dict.fromkeys(starts))


def plan_windows(
    volume_shape: GridShape,
    patch_shape: GridShape = GridShape(128, 128, 128),
    overlap: float = 0.5,
    blend_mode: str = "gaussian",
) -> WindowPlan:
    """Plan covering windows for a volume; see module docstring for placement."""
    if not 0.0 <= overlap < 1.0:
        raise InvalidOverlap(f"overlap must lie in [0, 1), got {overlap}")
    if blend_mode not in BLEND_MODES:
        raise ValueError(f"blend_mode must be one of {BLEND_MODES}, got {blend_mode!r}")

    vol = volume_shape.as_tuple()
    patch = patch_shape.as_tuple()
    pad_lo, padded, starts = [], [], []
    for dim, p in zip(vol, patch):
        pad = max(0, p - dim)
        pad_lo.append(pad // 2)
        padded.append(max(dim, p))
        stride = max(1, math.ceil(p * (1.0 - overlap)))
        starts.append(_axis_starts(padded[-1], p, stride))
    return WindowPlan(
        volume_shape=volume_shape,
        padded_shape=GridShape.of(padded),
        pad_lo=tuple(pad_lo),
        patch_shape=patch_shape,
        overlap=overlap,
        starts=tuple(starts),
        blend_mode=blend_mode,
    )


def gaussian_weights(patch_shape: GridShape) -> np.ndarray:
    """Separable Gaussian window weights, peak-normalized and floored at 1e-3."""
    axes = []
    for n in patch_shape.as_tuple():
        center = (n - 1) / 2.0
        sigma = max(n * GAUSSIAN_SIGMA_SCALE, 1e-8)
        i = np.arange(n, dtype=np.float64)
        axes.append(np.exp(-((i - center) ** 2) / (2.0 * sigma**2)))
    w = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    w /= w.max()
    return np.maximum(w, GAUSSIAN_WEIGHT_FLOOR)


def window_weights(plan: WindowPlan) -> np.ndarray:
    if plan.blend_mode == "gaussian":
        return gaussian_weights(plan.patch_shape)
    return np.ones(plan.patch_shape.as_tuple(), dtype=np.float64)


def pad_volume_data(data: np.ndarray, plan: WindowPlan) -> np.ndarray:
    """Zero-pad channel-major data to the plan's padded shape."""
    if plan.padded_shape == plan.volume_shape:
        return data
    pads = [(0, 0)]
    for dim, padded, lo in zip(
        plan.volume_shape.as_tuple(), plan.padded_shape.as_tuple(), plan.pad_lo
    ):
        pads.append((lo, padded - dim - lo))
    return np.pad(data, pads, mode="constant")


class BlendAccumulator:
    """Running weighted sum of patch outputs over the padded volume.

    Accumulates the weighted values in float32 and the weights in float64.
    Partial accumulators from concurrent workers merge associatively.
    """

    def __init__(self, plan: WindowPlan):
        self.plan = plan
        shape = plan.padded_shape.as_tuple()
        self.weighted_sum = np.zeros((3,) + shape, dtype=np.float32)
        self.weight_sum = np.zeros(shape, dtype=np.float64)
        self._weights = window_weights(plan)

    def add(self, start: tuple[int, int, int], patch_probs: np.ndarray) -> None:
        patch = self.plan.patch_shape.as_tuple()
        if patch_probs.shape != (3,) + patch:
            raise ShapeMismatch(
                f"patch output shape {patch_probs.shape} != {(3,) + patch}"
            )
        if patch_probs.size and (patch_probs.min() < 0.0 or patch_probs.max() > 1.0):
            raise ValueError("patch probabilities escape [0,1]")
        sl = tuple(slice(s, s + p) for s, p in zip(start, patch))
        self.weighted_sum[(slice(None),) + sl] += (
            patch_probs.astype(np.float64) * self._weights
        ).astype(np.float32)
        self.weight_sum[sl] += self._weights

    def merge(self, other: "BlendAccumulator") -> None:
        self.weighted_sum += other.weighted_sum
        self.weight_sum += other.weight_sum

    def finalize(self) -> ProbabilityMap:
        if self.weight_sum.min() <= 0.0:
            raise MissingWindowOutput("some voxels were covered by no window output")
        blended = self.weighted_sum / self.weight_sum
        np.clip(blended, 0.0, 1.0, out=blended)
        lo = self.plan.pad_lo
        dims = self.plan.volume_shape.as_tuple()
        sl = tuple(slice(lo[a], lo[a] + dims[a]) for a in range(3))
        return ProbabilityMap(blended[(slice(None),) + sl].astype(np.float32))


def blend(
    plan: WindowPlan,
    patch_outputs: Iterable[tuple[tuple[int, int, int], np.ndarray]],
) -> ProbabilityMap:
    """Blend one 3-channel output per planned window into a full ProbabilityMap."""
    planned = set(plan.windows())
    acc = BlendAccumulator(plan)
    seen = set()
    for start, patch in patch_outputs:
        start = tuple(int(s) for s in start)
        if start not in planned:
            raise MissingWindowOutput(f"output for unplanned window start {start}")
        acc.add(start, np.asarray(patch))
        seen.add(start)
    missing = planned - seen
    if missing:
        raise MissingWindowOutput(f"missing outputs for {len(missing)} windows, e.g. {sorted(missing)[0]}")
    return acc.finalize()


def run_sliding_window(
    predict_fn: Callable[[np.ndarray], np.ndarray],
    data: np.ndarray,
    plan: WindowPlan,
    max_workers: int = 1,
) -> ProbabilityMap:
    """Predict every planned window of channel-major data and blend.

    Outputs are blended in plan order whatever the completion order, so the
    result is identical for any worker count.
    """
    padded = pad_volume_data(data, plan)
    patch = plan.patch_shape.as_tuple()
    windows = plan.windows()

    def patch_at(start):
        sl = tuple(slice(s, s + p) for s, p in zip(start, patch))
        return padded[(slice(None),) + sl]

    if max_workers > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=min(max_workers, len(windows))) as pool:
            outputs = list(pool.map(lambda s: predict_fn(patch_at(s)), windows))
    else:
        outputs = [predict_fn(patch_at(s)) for s in windows]

    acc = BlendAccumulator(plan)
    for start, out in zip(windows, outputs):
        acc.add(start, out)
    return acc.finalize()
