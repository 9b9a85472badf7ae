"""Command-line entry point.

Subcommands: preprocess, infer, postprocess, evaluate, tune, overlay, run.
Exit codes: 0 success, 1 fatal error, 2 partial batch failure.
Log verbosity comes from the TUMORSEG_LOG_LEVEL environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import _accel
from .errors import TumorsegError
from .metrics import DEFAULT_EMPTY_PENALTY, REGIONS, score_case
from .nifti import load_labelmap, load_volume, save_labelmap, save_volume
from .pipeline import PipelineConfig, discover_cases, render_overlay, run_batch
from .postprocess import PostprocessParams, postprocess
from .preprocess import compute_foreground_box, crop, foreground_mask, normalize, restore
from .probio import read_probability_map, write_probability_map
from .tta import infer_ensemble
from .tuner import SweepSpec, run_sweep
from .volgrid import CropBox


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _modality_args(p: _Parser):
    p.add_argument("--t1", help="T1 NIfTI path")
    p.add_argument("--t1ce", help="T1Gd NIfTI path")
    p.add_argument("--t2", help="T2 NIfTI path")
    p.add_argument("--flair", help="T2-FLAIR NIfTI path")
    p.add_argument("--volume", help="single 4-channel NIfTI instead of per-modality files")


def _load_input_volume(args):
    if args.volume:
        return load_volume(args.volume)
    paths = [args.t1, args.t1ce, args.t2, args.flair]
    if any(p is None for p in paths):
        raise TumorsegError("provide --volume or all of --t1 --t1ce --t2 --flair")
    return load_volume(paths)


def _preprocess_volume(vol):
    box = compute_foreground_box(vol)
    cropped = crop(vol, box)
    mask = foreground_mask(cropped)
    normalized, stats = normalize(cropped, mask)
    return normalized, box, stats


def _write_meta(path, case_id, box, stats):
    meta = {
        "case_id": case_id,
        "crop_box": box.to_dict(),
        "normalization": [s.to_dict() for s in stats],
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2)


def _cmd_preprocess(args) -> int:
    vol = _load_input_volume(args)
    normalized, box, stats = _preprocess_volume(vol)
    save_volume(normalized, args.out_volume)
    _write_meta(args.out_meta, args.case_id, box, stats)
    print(f"wrote {args.out_volume} (crop {box.lo} -> {box.hi}) and {args.out_meta}")
    return 0


def _cmd_infer(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    vol = _load_input_volume(args)
    normalized, box, stats = _preprocess_volume(vol)
    pm = infer_ensemble(
        cfg.ensemble(), normalized, cfg.tta, cfg.overlap, cfg.blend_mode, cfg.patch_shape
    )
    write_probability_map(args.out_prob, pm, normalized.affine)
    if args.out_meta:
        _write_meta(args.out_meta, args.case_id, box, stats)
    print(f"wrote {args.out_prob} shape {pm.shape.as_tuple()}")
    return 0


def _cmd_postprocess(args) -> int:
    pm, affine = read_probability_map(args.prob)
    params = PostprocessParams()
    if args.params:
        with open(args.params) as fh:
            params = PostprocessParams.from_dict(json.load(fh))
    labels, records = postprocess(pm, params, affine)
    if args.meta:
        with open(args.meta) as fh:
            box = CropBox.from_dict(json.load(fh)["crop_box"])
        labels = restore(labels, box)
    save_labelmap(labels, args.out_labels)
    if args.report:
        with open(args.report, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict()) + "\n")
    kept = sum(1 for r in records if r.kept)
    print(f"wrote {args.out_labels}: {kept}/{len(records)} components kept")
    return 0


def _cmd_evaluate(args) -> int:
    pred_dir, ref_dir = Path(args.pred_dir), Path(args.ref_dir)
    pred_files = sorted(p for p in pred_dir.iterdir() if ".nii" in p.name)
    if not pred_files:
        raise TumorsegError(f"no NIfTI predictions found in {pred_dir}")
    spacing = tuple(args.spacing)
    rows = []
    for pred_path in pred_files:
        ref_path = ref_dir / pred_path.name
        if not ref_path.exists():
            raise TumorsegError(f"missing reference for {pred_path.name}")
        score = score_case(
            load_labelmap(pred_path), load_labelmap(ref_path), spacing, args.empty_penalty
        )
        row = {"case": pred_path.name.split(".nii")[0]}
        row.update(score.to_dict())
        rows.append(row)

    with open(args.out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    aggregate = {"cases": len(rows)}
    for metric in ("dice", "hd95"):
        for region in (*REGIONS, "avg"):
            vals = [row[f"{metric}_{region.lower()}"] for row in rows]
            aggregate[f"{metric}_{region.lower()}_mean"] = float(np.mean(vals))
            aggregate[f"{metric}_{region.lower()}_median"] = float(np.median(vals))
    with open(args.out_json, "w") as fh:
        json.dump(aggregate, fh, indent=2)
    print(
        f"evaluated {len(rows)} cases: mean dice {aggregate['dice_avg_mean']:.4f}, "
        f"mean hd95 {aggregate['hd95_avg_mean']:.2f}"
    )
    return 0


def _cmd_tune(args) -> int:
    with open(args.sweep) as fh:
        spec = SweepSpec.from_dict(json.load(fh))
    ranked, manifest = run_sweep(spec)
    rows = [r.to_row() for r in ranked]
    with open(args.out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    best = ranked[0]
    with open(args.out_best, "w") as fh:
        json.dump(best.params.to_dict(), fh, indent=2)
    print(
        f"swept {manifest['grid_points']} points x {manifest['dataset_size']} cases "
        f"({manifest['total_evaluations']} evaluations); best {spec.objective} "
        f"= {best.objective_value:.4f} -> {args.out_best}"
    )
    return 0


def _cmd_overlay(args) -> int:
    vol = _load_input_volume(args)
    labels = load_labelmap(args.labels)
    out = render_overlay(vol, labels, args.axis, args.index, args.out, channel=args.channel)
    print(f"wrote {out}")
    return 0


def _apply_sets(raw_overrides: dict, assignments: list[str]) -> dict:
    for item in assignments:
        key, _, value = item.partition("=")
        if not _:
            raise TumorsegError(f"--set expects key=value, got {item!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw_overrides
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = parsed
    return raw_overrides


def _cmd_run(args) -> int:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    if args.cases_dir:
        overrides.setdefault("input", {})["cases_dir"] = args.cases_dir
    if args.out_dir:
        overrides.setdefault("output", {})["dir"] = args.out_dir
    if args.workers:
        overrides["workers"] = args.workers
    _apply_sets(overrides, args.set or [])
    cfg = PipelineConfig(overrides)

    cases = discover_cases(cfg)
    if not cases:
        raise TumorsegError(f"no cases found under {cfg.raw['input']['cases_dir']}")
    manifests, aggregate = run_batch(cfg, cases)

    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "batch_report.json"
    with open(report_path, "w") as fh:
        json.dump(
            {"aggregate": aggregate, "manifests": [m.to_dict() for m in manifests]},
            fh,
            indent=2,
        )
    print(
        f"{aggregate['succeeded']}/{aggregate['cases']} cases succeeded "
        f"(kernels: {_accel.backend_name()}); report: {report_path}"
    )
    for failure in aggregate["failed_cases"]:
        print(f"  FAILED {failure['case_id']}: {failure['error']}", file=sys.stderr)
    if aggregate["succeeded"] == 0:
        return 1
    return 2 if aggregate["failed"] else 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tumorseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="crop to brain region and z-score channels")
    _modality_args(p)
    p.add_argument("--case-id", default="case")
    p.add_argument("--out-volume", required=True)
    p.add_argument("--out-meta", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("infer", help="preprocess + sliding-window TTA/ensemble inference")
    _modality_args(p)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--case-id", default="case")
    p.add_argument("--out-prob", required=True, help="output probability map (.tspm)")
    p.add_argument("--out-meta")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("postprocess", help="probability map -> label map")
    p.add_argument("--prob", required=True)
    p.add_argument("--params", help="PostprocessParams JSON (e.g. tune's best-params file)")
    p.add_argument("--meta", help="preprocess sidecar; restores original geometry")
    p.add_argument("--out-labels", required=True)
    p.add_argument("--report", help="component audit JSONL path")
    p.set_defaults(func=_cmd_postprocess)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--spacing", nargs=3, type=float, default=[1.0, 1.0, 1.0])
    p.add_argument("--empty-penalty", type=float, default=DEFAULT_EMPTY_PENALTY)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("tune", help="grid-sweep postprocessing parameters")
    p.add_argument("--sweep", required=True, help="sweep spec JSON")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-best", required=True)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("overlay", help="render a labeled slice to PNG")
    _modality_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--channel", type=int, default=1, help="modality channel for grayscale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_overlay)

    p = sub.add_parser("run", help="end-to-end batch over a cases directory")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--cases-dir")
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set tta.enabled=false")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TUMORSEG_LOG_LEVEL", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TumorsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
