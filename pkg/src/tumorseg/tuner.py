"""Grid sweep of postprocessing hyperparameters against a labeled set.

Sweeps run over cached probability maps (inference is never re-run), score
every grid point with the metrics module, and rank by the chosen objective.
Deterministic: grid points are enumerated in lexicographic parameter order
and ties keep that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, EmptyDataset, FileMissing
from .metrics import DEFAULT_EMPTY_PENALTY, REGIONS, score_case
from .nifti import load_labelmap
from .postprocess import PostprocessParams, postprocess
from .probio import read_probability_map

OBJECTIVES = ("mean_dice", "mean_dice_minus_hd95_penalty")

_PARAM_KEYS = tuple(sorted(PostprocessParams().to_dict().keys()))


@dataclass(frozen=True)
class SweepSpec:
    """Parameter grid, objective, and (probability map, reference) dataset."""

    grid: dict[str, list]
    dataset: list[tuple[str, str]]
    objective: str = "mean_dice"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    empty_penalty: float = DEFAULT_EMPTY_PENALTY

    def __post_init__(self):
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ConfigInvalid("sweep grid must be non-empty with non-empty value lists")
        unknown = set(self.grid) - set(_PARAM_KEYS)
        if unknown:
            raise ConfigInvalid(f"unknown sweep parameters: {sorted(unknown)}")
        if self.objective not in OBJECTIVES:
            raise ConfigInvalid(f"objective must be one of {OBJECTIVES}")
        if not self.dataset:
            raise EmptyDataset("sweep dataset is empty")
        # force domain validation of every grid point early
        for point in self.points():
            PostprocessParams.from_dict(point)

    def points(self) -> list[dict]:
        """All grid points, ascending lexicographic in sorted parameter-name order."""
        keys = sorted(self.grid.keys())
        return [dict(zip(keys, combo)) for combo in product(*(sorted(self.grid[k]) for k in keys))]

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        dataset = [(entry["prob"], entry["ref"]) for entry in d.get("dataset", [])]
        return cls(
            grid=dict(d.get("grid", {})),
            dataset=dataset,
            objective=d.get("objective", "mean_dice"),
            spacing=tuple(d.get("spacing", (1.0, 1.0, 1.0))),
            empty_penalty=float(d.get("empty_penalty", DEFAULT_EMPTY_PENALTY)),
        )


@dataclass(frozen=True)
class SweepResult:
    params: PostprocessParams
    point: dict
    objective_value: float
    mean_dice: dict[str, float]
    mean_hd95: dict[str, float]

    def to_row(self) -> dict:
        row = dict(self.point)
        row["objective"] = self.objective_value
        for r in REGIONS:
            row[f"dice_{r.lower()}"] = self.mean_dice[r]
            row[f"hd95_{r.lower()}"] = self.mean_hd95[r]
        return row


def _evaluate_point(point: dict, cases, spec: SweepSpec) -> SweepResult:
    params = PostprocessParams.from_dict(point)
    dices = {r: [] for r in REGIONS}
    hds = {r: [] for r in REGIONS}
    for pm, ref in cases:
        labels, _ = postprocess(pm, params, affine=ref.affine)
        score = score_case(labels, ref, spec.spacing, spec.empty_penalty)
        for r in REGIONS:
            dices[r].append(score.dice[r])
            hds[r].append(score.hd95[r])
    mean_dice = {r: float(np.mean(dices[r])) for r in REGIONS}
    mean_hd95 = {r: float(np.mean(hds[r])) for r in REGIONS}
    dice_avg = float(np.mean([mean_dice[r] for r in REGIONS]))
    hd95_avg = float(np.mean([mean_hd95[r] for r in REGIONS]))
    if spec.objective == "mean_dice":
        objective = dice_avg
    else:
        objective = dice_avg - hd95_avg / spec.empty_penalty
    return SweepResult(params, point, objective, mean_dice, mean_hd95)


def run_sweep(spec: SweepSpec) -> tuple[list[SweepResult], dict]:
    """Evaluate every grid point over the dataset.

    Returns results sorted by objective descending (ties keep lexicographic
    parameter order) plus a manifest with evaluation counts.
    """
    for prob_path, ref_path in spec.dataset:
        for p in (prob_path, ref_path):
            if not Path(p).exists():
                raise FileMissing(f"sweep input does not exist: {p}")
    cases = []
    for prob_path, ref_path in spec.dataset:
        pm, _affine = read_probability_map(prob_path)
        ref = load_labelmap(ref_path)
        cases.append((pm, ref))

    points = spec.points()
    results = [_evaluate_point(point, cases, spec) for point in points]
    order = sorted(range(len(results)), key=lambda i: (-results[i].objective_value, i))
    ranked = [results[i] for i in order]
    manifest = {
        "grid_points": len(points),
        "dataset_size": len(cases),
        "total_evaluations": len(points) * len(cases),
        "objective": spec.objective,
    }
    return ranked, manifest
