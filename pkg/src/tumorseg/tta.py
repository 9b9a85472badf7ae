"""Flip test-time augmentation and multi-backend probability ensembling.

TTA runs full sliding-window inference on each of the 8 axis-flip variants
of the volume, un-flips the resulting maps, and averages them voxel-wise.
Ensembling is a weighted voxel-wise mean of per-backend TTA maps. Both
averages accumulate in float64 (up to 8 x n_backends summands per voxel).
Because all averaging is linear, flipping-then-ensembling and
ensembling-then-flipping give the same result; the implementation averages
TTA within each backend first.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import ConfigInvalid, EmptyEnsemble
from .predictor import PredictorBackend
from .tiler import GridShape, plan_windows, run_sliding_window
from .volgrid import MultimodalVolume, ProbabilityMap, flip_array

ALL_FLIP_SETS: tuple[tuple[str, ...], ...] = tuple(
    subset for r in range(4) for subset in combinations(("x", "y", "z"), r)
)
assert len(ALL_FLIP_SETS) == 8


@dataclass(frozen=True)
class TtaConfig:
    enabled: bool = True

    @property
    def flip_sets(self) -> tuple[tuple[str, ...], ...]:
        return ALL_FLIP_SETS if self.enabled else ((),)


@dataclass(frozen=True)
class EnsembleConfig:
    backends: Sequence[PredictorBackend]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.backends) == 0:
            raise EmptyEnsemble("ensemble requires at least one backend")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if len(w) != len(self.backends):
                raise ConfigInvalid(
                    f"{len(w)} weights for {len(self.backends)} backends"
                )
            if any(v < 0 for v in w):
                raise ConfigInvalid("ensemble weights must be non-negative")
            if abs(sum(w) - 1.0) > 1e-9:
                raise ConfigInvalid(f"ensemble weights must sum to 1, got {sum(w)}")
            object.__setattr__(self, "weights", w)

    def effective_weights(self) -> tuple[float, ...]:
        if self.weights is not None:
            return self.weights
        n = len(self.backends)
        return tuple(1.0 / n for _ in range(n))


def infer_tta(
    backend: PredictorBackend,
    vol: MultimodalVolume,
    tta: TtaConfig = TtaConfig(),
    overlap: float = 0.5,
    blend_mode: str = "gaussian",
    patch_shape: GridShape | None = None,
) -> ProbabilityMap:
    """Flip-averaged sliding-window inference for one backend."""
    plan = plan_windows(
        vol.shape, patch_shape or backend.spec.patch_shape, overlap, blend_mode
    )
    flip_sets = tta.flip_sets
    acc = np.zeros((3,) + vol.shape.as_tuple(), dtype=np.float64)
    for axes in flip_sets:
        flipped = flip_array(vol.data, axes)
        pm = run_sliding_window(
            backend.predict_patch, flipped, plan, max_workers=backend.max_concurrency
        )
        acc += flip_array(pm.data, axes)
    acc /= len(flip_sets)
    np.clip(acc, 0.0, 1.0, out=acc)
    return ProbabilityMap(acc.astype(np.float32))


def infer_ensemble(
    cfg: EnsembleConfig,
    vol: MultimodalVolume,
    tta: TtaConfig = TtaConfig(),
    overlap: float = 0.5,
    blend_mode: str = "gaussian",
    patch_shape: GridShape | None = None,
) -> ProbabilityMap:
    """Weighted voxel-wise mean of per-backend TTA probability maps."""
    acc = np.zeros((3,) + vol.shape.as_tuple(), dtype=np.float64)
    for backend, weight in zip(cfg.backends, cfg.effective_weights()):
        try:
            pm = infer_tta(backend, vol, tta, overlap, blend_mode, patch_shape)
        except Exception as exc:
            exc.args = (f"[backend {backend.identity}] {exc}",) + exc.args[1:]
            raise
        acc += weight * pm.data.astype(np.float64)
    np.clip(acc, 0.0, 1.0, out=acc)
    return ProbabilityMap(acc.astype(np.float32))
