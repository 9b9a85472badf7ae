"""Phantom synthesis: nested tumor spheres, noise blobs, reference labels.

Intensity coding matches the consuming pipeline's sphere stub: the ET
profile is written into T1, TC into T1Gd, WT into T2-FLAIR (T2 carries WT
at 0.8x), each on top of a constant tissue level. Spheres fall off linearly
over a 2-voxel shell so blending and TTA see non-binary values; the
reference label map cuts each sphere at its nominal radius (profile 0.5).
Noise blobs go into every channel but never into the reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, IoFailure
from .niftiout import write_nifti

SHELL = 2.0
MODALITY_SUFFIXES = ("t1", "t1ce", "t2", "flair")

LABEL_TC_ONLY = 1
LABEL_EDEMA = 2
LABEL_ET = 3

# region -> labels making it up, mirroring the BraTS-style nesting
REGION_LABELS = {"ET": (3,), "TC": (1, 3), "WT": (1, 2, 3)}


@dataclass(frozen=True)
class FixtureSpec:
    """One synthetic case: geometry, noise load, and the seed fixing it all."""

    grid_shape: tuple[int, int, int] = (64, 64, 64)
    radii: tuple[float, float, float] = (6.0, 9.0, 12.0)  # (r_et, r_tc, r_wt)
    center: tuple[float, float, float] | None = None
    tissue: float = 1.0
    amplitude: float = 4.0
    blob_count: int = 10
    blob_radius_range: tuple[float, float] = (1.3, 2.0)
    blob_intensity: float = 1.0
    seed: int = 0
    case_id: str = "case_000"

    def __post_init__(self):
        if len(self.grid_shape) != 3 or any(int(s) < 8 for s in self.grid_shape):
            raise InvalidSpec(f"grid_shape must be 3 dims >= 8, got {self.grid_shape}")
        r_et, r_tc, r_wt = self.radii
        if not (0 < r_et <= r_tc <= r_wt):
            raise InvalidSpec(f"radii must be nested 0 < r_et <= r_tc <= r_wt, got {self.radii}")
        lo, hi = self.blob_radius_range
        if not (0 < lo <= hi):
            raise InvalidSpec(f"bad blob radius range {self.blob_radius_range}")
        if self.blob_count < 0:
            raise InvalidSpec("blob_count must be >= 0")
        if r_wt + SHELL >= min(self.grid_shape) / 2:
            raise InvalidSpec("WT sphere (plus falloff shell) does not fit the grid")

    def effective_center(self) -> tuple[float, float, float]:
        if self.center is not None:
            return tuple(float(c) for c in self.center)
        return tuple(s / 2.0 for s in self.grid_shape)

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        kwargs = {}
        for key in ("tissue", "amplitude", "blob_intensity"):
            if key in d:
                kwargs[key] = float(d[key])
        for key in ("blob_count", "seed"):
            if key in d:
                kwargs[key] = int(d[key])
        if "case_id" in d:
            kwargs["case_id"] = str(d["case_id"])
        if "grid_shape" in d:
            kwargs["grid_shape"] = tuple(int(v) for v in d["grid_shape"])
        if "radii" in d:
            r = d["radii"]
            if isinstance(r, dict):
                kwargs["radii"] = (float(r["et"]), float(r["tc"]), float(r["wt"]))
            else:
                kwargs["radii"] = tuple(float(v) for v in r)
        if d.get("center") is not None:
            kwargs["center"] = tuple(float(v) for v in d["center"])
        if "blob_radius_range" in d:
            kwargs["blob_radius_range"] = tuple(float(v) for v in d["blob_radius_range"])
        return cls(**kwargs)


def _distance(shape, center):
    grids = np.indices(shape, dtype=np.float64)
    return np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, center)))


def _profile(dist, radius):
    return np.clip((radius + SHELL / 2.0 - dist) / SHELL, 0.0, 1.0)


def _place_blobs(spec: FixtureSpec, rng: np.random.Generator):
    """Rejection-sample non-touching blob spheres clear of the main lesion."""
    center = spec.effective_center()
    clearance = spec.radii[2] + SHELL
    blobs = []
    tries = 0
    while len(blobs) < spec.blob_count:
        tries += 1
        if tries > 50000:
            raise InvalidSpec("cannot place the requested noise blobs in this grid")
        radius = float(rng.uniform(*spec.blob_radius_range))
        c = tuple(float(rng.uniform(radius + 3.0, s - radius - 3.0)) for s in spec.grid_shape)
        if float(np.sqrt(sum((a - b) ** 2 for a, b in zip(c, center)))) < clearance + radius + 4.0:
            continue
        if any(
            float(np.sqrt(sum((a - b) ** 2 for a, b in zip(c, bc)))) < radius + br + 4.0
            for bc, br in blobs
        ):
            continue
        blobs.append((c, radius))
    return blobs


def synthesize(spec: FixtureSpec):
    """Build the in-memory case: (channels (4,X,Y,Z) float32, labels uint8, blobs)."""
    shape = spec.grid_shape
    center = spec.effective_center()
    rng = np.random.default_rng(spec.seed)
    dist = _distance(shape, center)
    p_et = _profile(dist, spec.radii[0])
    p_tc = _profile(dist, spec.radii[1])
    p_wt = _profile(dist, spec.radii[2])

    blobs = _place_blobs(spec, rng)
    noise = np.zeros(shape, dtype=np.float64)
    for bc, br in blobs:
        noise += _profile(_distance(shape, bc), br)
    noise = np.clip(noise, 0.0, 1.0) * spec.blob_intensity

    amp = spec.amplitude
    t1 = spec.tissue + amp * (p_et + noise)
    t1gd = spec.tissue + amp * (p_tc + noise)
    t2 = spec.tissue + 0.8 * amp * (p_wt + noise)
    flair = spec.tissue + amp * (p_wt + noise)
    channels = np.stack([t1, t1gd, t2, flair]).astype(np.float32)

    labels = np.zeros(shape, dtype=np.uint8)
    labels[dist <= spec.radii[2]] = LABEL_EDEMA
    labels[dist <= spec.radii[1]] = LABEL_TC_ONLY
    labels[dist <= spec.radii[0]] = LABEL_ET
    return channels, labels, blobs


def ground_truth(spec: FixtureSpec, labels: np.ndarray, blobs) -> dict:
    """Exact voxel accounting for the generated case."""
    label_counts = {str(v): int((labels == v).sum()) for v in range(4)}
    region_counts = {
        region: int(np.isin(labels, values).sum())
        for region, values in REGION_LABELS.items()
    }
    shape = spec.grid_shape
    blob_entries = []
    for bc, br in blobs:
        voxels = int((_distance(shape, bc) <= br).sum())
        blob_entries.append({"center": list(bc), "radius": br, "voxels": voxels})
    return {
        "case_id": spec.case_id,
        "seed": spec.seed,
        "grid_shape": list(shape),
        "radii": {"et": spec.radii[0], "tc": spec.radii[1], "wt": spec.radii[2]},
        "region_voxel_counts": region_counts,
        "label_voxel_counts": label_counts,
        "blobs": blob_entries,
    }


def generate_case(spec: FixtureSpec, out_dir) -> dict:
    """Write the case files; returns the ground-truth dict (also saved as JSON).

    Layout: <out>/<case_id>/<case_id>_{t1,t1ce,t2,flair}.nii.gz,
    <case_id>_seg.nii.gz, <case_id>_truth.json. Deterministic given the seed.
    """
    out_dir = Path(out_dir)
    case_dir = out_dir / spec.case_id
    try:
        case_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{case_dir}: {exc}") from exc

    channels, labels, blobs = synthesize(spec)
    affine = np.eye(4)
    for c, suffix in enumerate(MODALITY_SUFFIXES):
        write_nifti(case_dir / f"{spec.case_id}_{suffix}.nii.gz", channels[c], affine)
    write_nifti(case_dir / f"{spec.case_id}_seg.nii.gz", labels, affine)

    truth = ground_truth(spec, labels, blobs)
    truth_path = case_dir / f"{spec.case_id}_truth.json"
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
    return truth
