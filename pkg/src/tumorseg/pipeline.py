"""End-to-end case orchestration: load -> preprocess -> infer -> postprocess -> save.

Cases run independently with a bounded thread pool; within a case every
stage is deterministic, so fixed config + fixed inputs give byte-identical
outputs whatever the worker count. Batch mode records failures per case and
keeps going.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import MissingModality, SliceOutOfBounds, TumorsegError
from .metrics import DEFAULT_EMPTY_PENALTY
from .nifti import load_volume, save_labelmap
from .postprocess import PostprocessParams, postprocess
from .predictor import load_backend
from .preprocess import compute_foreground_box, crop, foreground_mask, normalize, restore
from .probio import write_probability_map
from .tiler import plan_windows
from .tta import EnsembleConfig, TtaConfig, infer_ensemble
from .volgrid import GridShape, LabelMap, MultimodalVolume

log = logging.getLogger(__name__)

DEFAULT_MODALITY_SUFFIXES = ("t1", "t1ce", "t2", "flair")

DEFAULT_CONFIG = {
    "input": {"cases_dir": None, "modality_suffixes": list(DEFAULT_MODALITY_SUFFIXES)},
    "ensemble": {"backends": [{"kind": "stub-sphere"}], "weights": None},
    "tiler": {"patch_shape": [128, 128, 128], "overlap": 0.5, "blend_mode": "gaussian"},
    "tta": {"enabled": True},
    "postprocess": PostprocessParams().to_dict(),
    "metrics": {"spacing": [1.0, 1.0, 1.0], "empty_penalty": DEFAULT_EMPTY_PENALTY},
    "output": {
        "dir": "out",
        "pattern": "{case_id}.nii.gz",
        "save_probability_maps": False,
        "save_component_report": True,
    },
    "workers": 1,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


class PipelineConfig:
    """Effective pipeline configuration with a reproducible hash."""

    def __init__(self, overrides: dict | None = None):
        self.raw = _merge(DEFAULT_CONFIG, overrides or {})
        if int(self.raw["workers"]) < 1:
            raise ValueError("workers must be >= 1")
        self._backends = None

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls(json.load(fh))

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def patch_shape(self) -> GridShape:
        return GridShape.of(self.raw["tiler"]["patch_shape"])

    @property
    def overlap(self) -> float:
        return float(self.raw["tiler"]["overlap"])

    @property
    def blend_mode(self) -> str:
        return self.raw["tiler"]["blend_mode"]

    @property
    def tta(self) -> TtaConfig:
        return TtaConfig(enabled=bool(self.raw["tta"]["enabled"]))

    @property
    def postprocess_params(self) -> PostprocessParams:
        return PostprocessParams.from_dict(self.raw["postprocess"])

    def ensemble(self) -> EnsembleConfig:
        if self._backends is None:
            backends = []
            for block in self.raw["ensemble"]["backends"]:
                block = dict(block)
                block.setdefault("patch_shape", self.raw["tiler"]["patch_shape"])
                kind = block.pop("kind")
                backends.append(load_backend(kind, block))
            self._backends = backends
        weights = self.raw["ensemble"]["weights"]
        return EnsembleConfig(self._backends, None if weights is None else tuple(weights))

    def output_dir(self) -> Path:
        return Path(self.raw["output"]["dir"])

    def labels_path(self, case_id: str) -> Path:
        return self.output_dir() / self.raw["output"]["pattern"].format(case_id=case_id)


@dataclass(frozen=True)
class CaseInput:
    case_id: str
    modality_paths: tuple


def discover_cases(cfg: PipelineConfig) -> list[CaseInput]:
    """Find case subdirectories containing the four modality files."""
    cases_dir = cfg.raw["input"]["cases_dir"]
    if not cases_dir:
        raise MissingModality("config input.cases_dir is not set")
    suffixes = cfg.raw["input"]["modality_suffixes"]
    cases = []
    for sub in sorted(Path(cases_dir).iterdir()):
        if not sub.is_dir():
            continue
        paths = []
        for suffix in suffixes:
            hits = sorted(sub.glob(f"*{suffix}.nii*"))
            if len(hits) != 1:
                raise MissingModality(
                    f"{sub.name}: expected one *{suffix}.nii* file, found {len(hits)}"
                )
            paths.append(hits[0])
        cases.append(CaseInput(sub.name, tuple(paths)))
    return cases


@dataclass
class CaseManifest:
    """Run record for one case: timings, window count, audit summary, outputs."""

    case_id: str
    status: str = "ok"
    stage_timings_ms: dict = field(default_factory=dict)
    window_count: int = 0
    components: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    config_hash: str = ""
    error: dict | None = None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "status": self.status,
            "stage_timings_ms": self.stage_timings_ms,
            "window_count": self.window_count,
            "components": self.components,
            "outputs": self.outputs,
            "config_hash": self.config_hash,
            "error": self.error,
        }


class _StageClock:
    def __init__(self, manifest: CaseManifest):
        self.manifest = manifest
        self.stage = "load"

    def start(self, stage: str):
        self.stage = stage
        self._t0 = time.perf_counter()

    def stop(self):
        self.manifest.stage_timings_ms[self.stage] = round(
            (time.perf_counter() - self._t0) * 1000.0, 3
        )


def run_case(cfg: PipelineConfig, case: CaseInput) -> CaseManifest:
    manifest = CaseManifest(case_id=case.case_id, config_hash=cfg.config_hash())
    clock = _StageClock(manifest)
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        clock.start("load")
        paths = case.modality_paths
        vol = load_volume(paths[0] if len(paths) == 1 else list(paths))
        clock.stop()

        clock.start("preprocess")
        box = compute_foreground_box(vol)
        cropped = crop(vol, box)
        mask = foreground_mask(cropped)
        normalized, _stats = normalize(cropped, mask)
        clock.stop()

        clock.start("infer")
        plan = plan_windows(normalized.shape, cfg.patch_shape, cfg.overlap, cfg.blend_mode)
        manifest.window_count = plan.window_count()
        pm = infer_ensemble(
            cfg.ensemble(), normalized, cfg.tta, cfg.overlap, cfg.blend_mode, cfg.patch_shape
        )
        clock.stop()

        clock.start("postprocess")
        labels_cropped, records = postprocess(pm, cfg.postprocess_params, cropped.affine)
        manifest.components = {
            "total": len(records),
            "kept": sum(1 for r in records if r.kept),
            "removed": sum(1 for r in records if not r.kept),
        }
        clock.stop()

        clock.start("restore")
        labels = restore(labels_cropped, box)
        clock.stop()

        clock.start("save")
        labels_path = cfg.labels_path(case.case_id)
        save_labelmap(labels, labels_path)
        manifest.outputs["labels"] = str(labels_path)
        if cfg.raw["output"]["save_probability_maps"]:
            prob_path = out_dir / f"{case.case_id}.tspm"
            write_probability_map(prob_path, pm, cropped.affine)
            manifest.outputs["probability_map"] = str(prob_path)
            meta_path = out_dir / f"{case.case_id}.meta.json"
            with open(meta_path, "w") as fh:
                json.dump({"case_id": case.case_id, "crop_box": box.to_dict()}, fh, indent=2)
            manifest.outputs["meta"] = str(meta_path)
        if cfg.raw["output"]["save_component_report"]:
            report_path = out_dir / f"{case.case_id}.components.jsonl"
            with open(report_path, "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec.to_dict()) + "\n")
            manifest.outputs["component_report"] = str(report_path)
        manifest_path = out_dir / f"{case.case_id}.manifest.json"
        clock.stop()
        with open(manifest_path, "w") as fh:
            json.dump(manifest.to_dict(), fh, indent=2)
        manifest.outputs["manifest"] = str(manifest_path)
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = {"stage": clock.stage, "message": str(exc)}
        if not isinstance(exc, TumorsegError):
            log.exception("case %s failed at stage %s", case.case_id, clock.stage)
        else:
            log.error("case %s failed at stage %s: %s", case.case_id, clock.stage, exc)
    return manifest


def run_batch(cfg: PipelineConfig, cases: list[CaseInput]) -> tuple[list[CaseManifest], dict]:
    """Process cases with bounded parallelism; failures recorded, not fatal."""
    if not cases:
        raise ValueError("case list is empty")
    cfg.ensemble()  # backend config errors are fatal, not per-case
    if cfg.workers > 1 and len(cases) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            manifests = list(pool.map(lambda c: run_case(cfg, c), cases))
    else:
        manifests = [run_case(cfg, c) for c in cases]

    ok = [m for m in manifests if m.status == "ok"]
    stage_means = {}
    if ok:
        for stage in ok[0].stage_timings_ms:
            vals = [m.stage_timings_ms[stage] for m in ok if stage in m.stage_timings_ms]
            stage_means[stage] = round(float(np.mean(vals)), 3)
    aggregate = {
        "cases": len(cases),
        "succeeded": len(ok),
        "failed": len(cases) - len(ok),
        "failed_cases": [
            {"case_id": m.case_id, "error": m.error} for m in manifests if m.status != "ok"
        ],
        "mean_stage_timings_ms": stage_means,
        "config_hash": cfg.config_hash(),
    }
    return manifests, aggregate


OVERLAY_COLORS = {1: (220, 50, 50), 2: (70, 200, 70), 3: (255, 215, 0)}


def render_overlay(
    vol: MultimodalVolume,
    labels: LabelMap,
    axis: str,
    index: int,
    out_path,
    channel: int = 1,
    alpha: float = 0.5,
) -> Path:
    """Write a grayscale slice with color-coded labels as a PNG."""
    from PIL import Image

    axis_idx = {"x": 0, "y": 1, "z": 2}.get(axis)
    if axis_idx is None:
        raise ValueError(f"axis must be x/y/z, got {axis!r}")
    dim = vol.shape.as_tuple()[axis_idx]
    if not 0 <= index < dim:
        raise SliceOutOfBounds(f"slice {index} out of range [0, {dim}) on axis {axis}")
    if labels.shape != vol.shape:
        raise SliceOutOfBounds("label map and volume shapes differ")

    take = [slice(None)] * 3
    take[axis_idx] = index
    img = vol.data[(channel, *take)].astype(np.float64)
    lab = labels.data[tuple(take)]

    lo, hi = np.percentile(img, 1.0), np.percentile(img, 99.0)
    gray = np.zeros_like(img) if hi <= lo else np.clip((img - lo) / (hi - lo), 0, 1)
    rgb = np.repeat((gray * 255).astype(np.uint8)[..., None], 3, axis=2)
    for value, color in OVERLAY_COLORS.items():
        sel = lab == value
        rgb[sel] = ((1 - alpha) * rgb[sel] + alpha * np.asarray(color)).astype(np.uint8)

    out_path = Path(out_path)
    Image.fromarray(np.swapaxes(rgb, 0, 1)).save(out_path)
    return out_path
