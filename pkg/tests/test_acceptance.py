"""Acceptance suite: the pipeline's exit criteria, one test per criterion.

Run with `pytest -s tests/test_acceptance.py` to see one PASS/FAIL line per
criterion. Only stub backends are used; no ML runtime or generated fixture
data is required.
"""

import functools
import time

import numpy as np
import pytest

import oracles
import phantoms
from tumorseg.metrics import dice, hd95, region_mask, score_case
from tumorseg.nifti import write_nifti
from tumorseg.pipeline import PipelineConfig, discover_cases, run_batch
from tumorseg.postprocess import (
    PostprocessParams,
    connected_components,
    filter_components,
    postprocess,
)
from tumorseg.predictor import ConstantBackend, PatchSpec, SphereStubBackend
from tumorseg.preprocess import foreground_mask, normalize
from tumorseg.tiler import blend, plan_windows
from tumorseg.tta import EnsembleConfig, TtaConfig, infer_ensemble, infer_tta
from tumorseg.volgrid import GridShape


def criterion(name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[ACCEPTANCE] {name}: FAIL")
                raise
            print(f"[ACCEPTANCE] {name}: PASS ({time.perf_counter() - t0:.1f}s)")

        return run

    return wrap


@criterion("window plan for 240x240x155, patch 128^3, overlap 0.5")
def test_window_plan_geometry():
    plan = plan_windows(GridShape(240, 240, 155), GridShape(128, 128, 128), 0.5)
    assert plan.starts[0] == (0, 64, 112)
    assert plan.starts[1] == (0, 64, 112)
    assert plan.starts[2] == (0, 27)
    assert plan.window_count() == 18
    covered = np.zeros(plan.padded_shape.as_tuple(), dtype=bool)
    for start in plan.windows():
        sl = tuple(slice(s, s + p) for s, p in zip(start, (128, 128, 128)))
        covered[sl] = True
    assert covered.all()


@criterion("blending conservation, 50 random shapes, both modes, < 1 min")
def test_blending_conservation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    patch = GridShape(16, 16, 16)
    for trial in range(50):
        dims = tuple(int(v) for v in rng.integers(16, 49, size=3))
        c = float(rng.uniform(0.0, 1.0))
        mode = ("uniform", "gaussian")[trial % 2]
        plan = plan_windows(GridShape.of(dims), patch, 0.5, mode)
        out = np.full((3, 16, 16, 16), c, dtype=np.float32)
        pm = blend(plan, [(s, out) for s in plan.windows()])
        assert np.abs(pm.data.astype(np.float64) - c).max() < 1e-6, (dims, mode)
    assert time.perf_counter() - t0 < 60.0


@criterion("TTA invariance with flip-equivariant stub, 8 flips, <= 1e-5")
def test_tta_invariance():
    tta = TtaConfig(enabled=True)
    assert len(tta.flip_sets) == 8
    assert len({frozenset(s) for s in tta.flip_sets}) == 8
    vol, _ = phantoms.make_phantom(shape=(40, 36, 28), radii=(3.0, 5.0, 7.0))
    backend = SphereStubBackend(spec=PatchSpec(patch_shape=GridShape(16, 16, 16)))
    with_tta = infer_tta(backend, vol, tta)
    without = infer_tta(backend, vol, TtaConfig(enabled=False))
    diff = np.abs(with_tta.data.astype(np.float64) - without.data.astype(np.float64))
    assert diff.max() < 1e-5


@criterion("connected components == flood-fill oracle on 1000 grids")
def test_connected_components_oracle():
    rng = np.random.default_rng(17)
    for trial in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, 17, size=3))
        mask = rng.random(shape) < float(rng.uniform(0.05, 0.6))
        conn = (6, 18, 26)[trial % 3]
        labels, records = connected_components(mask, conn)
        expected = oracles.flood_fill_partition(mask, conn)
        assert oracles.partition_from_labels(labels) == expected, (shape, conn)
        assert len(records) == len(expected)


@criterion("default postprocess parameters and boundary semantics")
def test_default_parameters():
    params = PostprocessParams()
    assert params.thresholds == (0.5, 0.5, 0.5)
    assert params.for_channel("ET")[1] == 100
    assert params.for_channel("TC")[1] == 150
    assert params.for_channel("WT")[1] == 500

    def run_blob(size, min_size):
        mask = np.zeros((12, 12, 12), dtype=bool)
        mask[np.unravel_index(np.arange(size), mask.shape)] = True
        labels, records = connected_components(mask, 26)
        kept, _ = filter_components(labels, records, min_size, 0.0)
        return int(kept.sum())

    assert run_blob(100, 100) == 100  # kept at the boundary
    assert run_blob(99, 100) == 0  # removed below it


@criterion("dice/hd95 == naive oracle on 500 pairs, <= 1e-9")
def test_metrics_oracle():
    rng = np.random.default_rng(23)
    for _ in range(500):
        shape = tuple(int(v) for v in rng.integers(2, 13, size=3))
        a = rng.random(shape) < float(rng.uniform(0.05, 0.5))
        b = rng.random(shape) < float(rng.uniform(0.05, 0.5))
        assert dice(a, b) == pytest.approx(oracles.naive_dice(a, b), abs=1e-9)
        assert hd95(a, b) == pytest.approx(oracles.naive_hd95(a, b), abs=1e-9)
    empty = np.zeros((4, 4, 4), dtype=bool)
    one = empty.copy()
    one[2, 2, 2] = True
    assert dice(empty, empty) == 1.0 and hd95(empty, empty) == 0.0
    assert dice(one, empty) == 0.0 and hd95(one, empty) == pytest.approx(373.13)
    assert dice(empty, one) == 0.0 and hd95(empty, one) == pytest.approx(373.13)


@criterion("postprocessing removes sub-cutoff noise, mean dice gain >= 2 points, < 5 min")
def test_noise_removal_improves_dice():
    t0 = time.perf_counter()
    rng = np.random.default_rng(41)
    backend = SphereStubBackend(spec=PatchSpec(patch_shape=GridShape(32, 32, 32)))
    ensemble = EnsembleConfig([backend])
    defaults = PostprocessParams()
    unfiltered = PostprocessParams(min_component_sizes=(0, 0, 0))
    shape = (64, 64, 64)
    center = (32.0, 32.0, 32.0)

    dice_with, dice_without = [], []
    for _ in range(20):
        blobs = phantoms.place_blobs(rng, shape, center, clear_radius=13.0, count=12)
        vol, reference = phantoms.make_phantom(
            shape=shape, center=center, radii=(6.0, 9.0, 12.0), blobs=blobs
        )
        normalized, _ = normalize(vol, foreground_mask(vol))
        pm = infer_ensemble(ensemble, normalized, TtaConfig(enabled=False))

        labels_raw, records_raw = postprocess(pm, unfiltered)
        labels_pp, _ = postprocess(pm, defaults)
        dice_without.append(score_case(labels_raw, reference).dice_avg)
        dice_with.append(score_case(labels_pp, reference).dice_avg)

        for channel, cutoff in (("TC", 150), ("WT", 500), ("ET", 100)):
            recs = [r for r in records_raw if r.channel == channel]
            sizes = sorted(r.size for r in recs)
            assert len(recs) == 1 + len(blobs), (channel, len(recs))
            assert all(s < cutoff for s in sizes[:-1]), (channel, sizes)

        # after default filtering each region is exactly the one true lesion
        for region in ("ET", "TC", "WT"):
            _, recs = connected_components(region_mask(labels_pp.data, region), 26)
            assert len(recs) == 1, region
        for bc, br in blobs:
            zone = phantoms.sphere_distance(shape, bc) <= br + 1.5
            assert labels_pp.data[zone].sum() == 0

    gain = float(np.mean(dice_with)) - float(np.mean(dice_without))
    assert gain >= 0.02, f"postprocessing gain {gain:.4f} < 2 dice points"
    assert time.perf_counter() - t0 < 300.0


@criterion("ensemble sanity: identity and constant averaging")
def test_ensemble_sanity():
    vol, _ = phantoms.make_phantom(shape=(24, 20, 18), radii=(2.0, 3.0, 4.0))
    spec = PatchSpec(patch_shape=GridShape(8, 8, 8))
    tta = TtaConfig(enabled=False)
    backend = SphereStubBackend(spec=spec)
    single = infer_tta(backend, vol, tta)
    ens = infer_ensemble(EnsembleConfig([backend]), vol, tta)
    assert np.abs(ens.data - single.data).max() < 1e-6

    pair = EnsembleConfig([ConstantBackend(0.2, spec=spec), ConstantBackend(0.8, spec=spec)])
    mixed = infer_ensemble(pair, vol, tta)
    assert np.abs(mixed.data - 0.5).max() < 1e-6


@criterion("end-to-end determinism across reruns and worker counts")
def test_run_determinism(tmp_path):
    affine = np.eye(4)
    cases_dir = tmp_path / "cases"
    for i in range(3):
        vol, _ = phantoms.make_phantom(
            shape=(36, 36, 32), radii=(3.0, 5.0, 7.0), brain_radius=14.0 + i
        )
        case_dir = cases_dir / f"case{i}"
        case_dir.mkdir(parents=True)
        for c, suffix in enumerate(("t1", "t1ce", "t2", "flair")):
            write_nifti(case_dir / f"case{i}_{suffix}.nii.gz", vol.data[c], affine)

    outputs = {}
    for run_id, workers in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / f"out_{run_id}"
        cfg = PipelineConfig(
            {
                "input": {"cases_dir": str(cases_dir)},
                "output": {"dir": str(out)},
                "tiler": {"patch_shape": [16, 16, 16]},
                "tta": {"enabled": True},
                "postprocess": {"min_size_tc": 40, "min_size_wt": 100, "min_size_et": 30},
                "workers": workers,
            }
        )
        manifests, aggregate = run_batch(cfg, discover_cases(cfg))
        assert aggregate["failed"] == 0
        outputs[run_id] = [
            (out / f"case{i}.nii.gz").read_bytes() for i in range(3)
        ]
    assert outputs["a"] == outputs["b"], "rerun with identical config differs"
    assert outputs["a"] == outputs["c"], "worker count changed outputs"
