import numpy as np
import pytest

import phantoms
from tumorseg.errors import ConfigInvalid, EmptyEnsemble
from tumorseg.predictor import (
    ConstantBackend,
    PatchSpec,
    PredictorBackend,
    SphereStubBackend,
)
from tumorseg.tta import ALL_FLIP_SETS, EnsembleConfig, TtaConfig, infer_ensemble, infer_tta
from tumorseg.volgrid import GridShape, ProbabilityMap, flip

SPEC = PatchSpec(patch_shape=GridShape(8, 8, 8))


class HashNoiseBackend(PredictorBackend):
    """Deterministic pseudo-random outputs keyed by patch content: a stand-in
    for an arbitrary recorded model in averaging tests."""

    def __init__(self, salt, spec=SPEC):
        super().__init__(spec, f"hash-noise[{salt}]")
        self.salt = salt

    def _predict(self, patch):
        digest = hash((self.salt, patch.tobytes())) % (2**32)
        rng = np.random.default_rng(digest)
        return rng.random((3,) + patch.shape[1:]).astype(np.float32)


@pytest.fixture
def phantom_volume():
    vol, _labels = phantoms.make_phantom(shape=(14, 12, 10), radii=(2.0, 3.0, 4.0))
    return vol


class TestFlipSets:
    def test_exactly_eight_subsets_when_enabled(self):
        cfg = TtaConfig(enabled=True)
        assert len(cfg.flip_sets) == 8
        assert () in cfg.flip_sets
        assert len({frozenset(s) for s in cfg.flip_sets}) == 8

    def test_disabled_is_identity_pass(self):
        assert TtaConfig(enabled=False).flip_sets == ((),)

    def test_unflip_is_exact(self, rng):
        pm = ProbabilityMap(rng.random((3, 5, 6, 7)).astype(np.float32))
        for axes in ALL_FLIP_SETS:
            assert np.array_equal(flip(flip(pm, axes), axes).data, pm.data)


class TestInferTta:
    def test_disabled_equals_single_pass(self, phantom_volume):
        from tumorseg.tiler import plan_windows, run_sliding_window

        backend = SphereStubBackend(spec=SPEC)
        plan = plan_windows(phantom_volume.shape, SPEC.patch_shape, 0.5)
        single = run_sliding_window(backend.predict_patch, phantom_volume.data, plan)
        tta_off = infer_tta(backend, phantom_volume, TtaConfig(enabled=False))
        assert np.array_equal(single.data, tta_off.data)

    def test_flip_equivariant_backend_makes_tta_invariant(self, phantom_volume):
        backend = SphereStubBackend(spec=SPEC)
        with_tta = infer_tta(backend, phantom_volume, TtaConfig(enabled=True))
        without = infer_tta(backend, phantom_volume, TtaConfig(enabled=False))
        assert np.abs(
            with_tta.data.astype(np.float64) - without.data.astype(np.float64)
        ).max() < 1e-5

    def test_constant_backend_stays_constant(self, phantom_volume):
        pm = infer_tta(ConstantBackend(0.7, spec=SPEC), phantom_volume)
        assert np.abs(pm.data - 0.7).max() < 1e-6


class TestEnsemble:
    def test_single_backend_identity(self, phantom_volume):
        backend = SphereStubBackend(spec=SPEC)
        single = infer_tta(backend, phantom_volume, TtaConfig(enabled=False))
        ens = infer_ensemble(
            EnsembleConfig([backend]), phantom_volume, TtaConfig(enabled=False)
        )
        assert np.abs(ens.data - single.data).max() < 1e-6

    def test_copies_of_same_backend_equal_single(self, phantom_volume):
        backends = [SphereStubBackend(spec=SPEC) for _ in range(3)]
        single = infer_tta(backends[0], phantom_volume, TtaConfig(enabled=False))
        ens = infer_ensemble(
            EnsembleConfig(backends), phantom_volume, TtaConfig(enabled=False)
        )
        assert np.abs(ens.data - single.data).max() < 1e-6

    def test_constant_pair_averages(self, phantom_volume):
        cfg = EnsembleConfig([ConstantBackend(0.2, spec=SPEC), ConstantBackend(0.8, spec=SPEC)])
        ens = infer_ensemble(cfg, phantom_volume, TtaConfig(enabled=False))
        assert np.abs(ens.data - 0.5).max() < 1e-6

    def test_three_backends_match_bruteforce_mean(self, phantom_volume):
        backends = [HashNoiseBackend(salt) for salt in (1, 2, 3)]
        tta = TtaConfig(enabled=False)
        singles = [infer_tta(b, phantom_volume, tta).data.astype(np.float64) for b in backends]
        expected = np.mean(singles, axis=0)
        ens = infer_ensemble(EnsembleConfig(backends), phantom_volume, tta)
        assert np.abs(ens.data.astype(np.float64) - expected).max() < 1e-6

    def test_permutation_invariance(self, phantom_volume):
        backends = [HashNoiseBackend(salt) for salt in (5, 6, 7)]
        tta = TtaConfig(enabled=False)
        a = infer_ensemble(EnsembleConfig(backends), phantom_volume, tta)
        b = infer_ensemble(EnsembleConfig(backends[::-1]), phantom_volume, tta)
        assert np.abs(a.data - b.data).max() <= 1e-6

    def test_weighted_mean(self, phantom_volume):
        cfg = EnsembleConfig(
            [ConstantBackend(0.0, spec=SPEC), ConstantBackend(1.0, spec=SPEC)],
            weights=(0.25, 0.75),
        )
        ens = infer_ensemble(cfg, phantom_volume, TtaConfig(enabled=False))
        assert np.abs(ens.data - 0.75).max() < 1e-6

    def test_empty_ensemble_rejected(self):
        with pytest.raises(EmptyEnsemble):
            EnsembleConfig([])

    def test_bad_weights_rejected(self):
        b = ConstantBackend(0.5, spec=SPEC)
        with pytest.raises(ConfigInvalid):
            EnsembleConfig([b, b], weights=(0.5, 0.6))
        with pytest.raises(ConfigInvalid):
            EnsembleConfig([b, b], weights=(-0.5, 1.5))
        with pytest.raises(ConfigInvalid):
            EnsembleConfig([b, b], weights=(1.0,))

    def test_error_annotated_with_identity(self, phantom_volume):
        class Exploding(PredictorBackend):
            def __init__(self):
                super().__init__(SPEC, "boom-backend")

            def _predict(self, patch):
                raise RuntimeError("kaput")

        cfg = EnsembleConfig([Exploding()])
        with pytest.raises(Exception, match="boom-backend"):
            infer_ensemble(cfg, phantom_volume, TtaConfig(enabled=False))

    def test_output_in_unit_interval(self, phantom_volume):
        ens = infer_ensemble(
            EnsembleConfig([HashNoiseBackend(9)]), phantom_volume, TtaConfig(enabled=True)
        )
        assert ens.data.min() >= 0.0 and ens.data.max() <= 1.0
