"""Sliding-window brain tumor segmentation inference pipeline.

Preprocessing (brain-region crop + foreground z-score), patch-based
sliding-window prediction with pluggable backends, 8-way flip test-time
augmentation, probability ensembling, connected-component postprocessing,
and Dice/HD95 evaluation.
"""

from .volgrid import (
    CropBox,
    GridShape,
    LabelMap,
    MultimodalVolume,
    ProbabilityMap,
    flip,
)
from .preprocess import NormalizationStats, compute_foreground_box, crop, normalize, restore
from .predictor import PatchSpec, PredictorBackend, load_backend, predict_patch
from .tiler import WindowPlan, blend, plan_windows
from .tta import EnsembleConfig, TtaConfig, infer_ensemble, infer_tta
from .postprocess import ComponentRecord, PostprocessParams, postprocess
from .metrics import CaseScore, dice, hd95, region_mask, score_case
from .tuner import SweepSpec, run_sweep

__version__ = "0.1.0"

__all__ = [
    "CaseScore",
    "ComponentRecord",
    "CropBox",
    "EnsembleConfig",
    "GridShape",
    "LabelMap",
    "MultimodalVolume",
    "NormalizationStats",
    "PatchSpec",
    "PostprocessParams",
    "PredictorBackend",
    "ProbabilityMap",
    "SweepSpec",
    "TtaConfig",
    "WindowPlan",
    "blend",
    "compute_foreground_box",
    "crop",
    "dice",
    "flip",
    "hd95",
    "infer_ensemble",
    "infer_tta",
    "load_backend",
    "normalize",
    "plan_windows",
    "postprocess",
    "predict_patch",
    "region_mask",
    "restore",
    "run_sweep",
    "score_case",
    "__version__",
]
