import numpy as np
import pytest
from scipy.special import expit

from tumorseg.errors import BackendFailure, ConfigInvalid, ModelLoadFailure, ShapeMismatch
from tumorseg.predictor import (
    ConstantBackend,
    PatchSpec,
    RecordingBackend,
    ReplayBackend,
    SphereStubBackend,
    load_backend,
    patch_key,
    predict_patch,
)
from tumorseg.volgrid import GridShape, flip_array

SMALL = PatchSpec(patch_shape=GridShape(6, 5, 4))


def random_patch(rng, spec=SMALL):
    return rng.normal(size=(4,) + spec.patch_shape.as_tuple()).astype(np.float32)


class TestConstantBackend:
    def test_constant_everywhere(self, rng):
        backend = ConstantBackend(0.7, spec=SMALL)
        out = predict_patch(backend, random_patch(rng))
        assert out.shape == (3, 6, 5, 4)
        assert np.all(out == np.float32(0.7))

    def test_per_channel_values(self, rng):
        backend = ConstantBackend([0.1, 0.5, 0.9], spec=SMALL)
        out = predict_patch(backend, random_patch(rng))
        for c, v in enumerate([0.1, 0.5, 0.9]):
            assert np.all(out[c] == np.float32(v))

    def test_out_of_range_config_rejected(self):
        with pytest.raises(ConfigInvalid):
            ConstantBackend(1.5, spec=SMALL)
        with pytest.raises(ConfigInvalid):
            load_backend("stub-constant", {"value": 1.5})


class TestSphereStub:
    def test_closed_form_rule_voxel_by_voxel(self, rng):
        backend = SphereStubBackend(gain=2.0, bias=0.5, spec=SMALL)
        patch = random_patch(rng)
        out = predict_patch(backend, patch)
        for k, src in enumerate(backend.sources):
            expected = expit(2.0 * (patch[src].astype(np.float64) - 0.5))
            assert np.abs(out[k] - expected).max() < 1e-6

    def test_flip_equivariance_exact(self, rng):
        backend = SphereStubBackend(spec=SMALL)
        patch = random_patch(rng)
        for axes in [("x",), ("y", "z"), ("x", "y", "z")]:
            a = predict_patch(backend, flip_array(patch, axes))
            b = flip_array(predict_patch(backend, patch), axes)
            assert np.array_equal(a, b), axes

    def test_high_intensity_saturates(self):
        patch = np.full((4, 6, 5, 4), 10.0, dtype=np.float32)
        out = predict_patch(SphereStubBackend(spec=SMALL), patch)
        assert out.min() > 0.99

    def test_determinism(self, rng):
        backend = SphereStubBackend(spec=SMALL)
        patch = random_patch(rng)
        assert np.array_equal(predict_patch(backend, patch), predict_patch(backend, patch))


class TestReplay:
    def test_record_then_replay_bit_identical(self, rng, tmp_path):
        inner = SphereStubBackend(spec=SMALL)
        recorder = RecordingBackend(inner, tmp_path)
        patches = [random_patch(rng) for _ in range(3)]
        recorded = [predict_patch(recorder, p) for p in patches]
        replay = ReplayBackend(tmp_path, spec=SMALL)
        # reversed order: replay keys on content, not call order
        for patch, expected in reversed(list(zip(patches, recorded))):
            assert np.array_equal(predict_patch(replay, patch), expected)

    def test_empty_directory_fails_on_first_predict(self, rng, tmp_path):
        replay = ReplayBackend(tmp_path, spec=SMALL)
        with pytest.raises(ModelLoadFailure):
            predict_patch(replay, random_patch(rng))

    def test_unknown_patch_fails(self, rng, tmp_path):
        recorder = RecordingBackend(ConstantBackend(0.5, spec=SMALL), tmp_path)
        predict_patch(recorder, random_patch(rng))
        replay = ReplayBackend(tmp_path, spec=SMALL)
        with pytest.raises(BackendFailure):
            predict_patch(replay, random_patch(rng) + 1.0)

    def test_missing_directory_is_config_error(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            ReplayBackend(tmp_path / "nope", spec=SMALL)

    def test_patch_key_depends_on_content_and_shape(self, rng):
        p = random_patch(rng)
        assert patch_key(p) != patch_key(p + 1.0)
        assert patch_key(p) == patch_key(p.copy())


class TestContract:
    def test_wrong_patch_shape(self, rng):
        backend = ConstantBackend(0.5, spec=SMALL)
        with pytest.raises(ShapeMismatch):
            predict_patch(backend, np.zeros((4, 3, 3, 3), dtype=np.float32))

    def test_out_of_range_output_rejected(self, rng):
        class Bad(ConstantBackend):
            def _predict(self, patch):
                out = super()._predict(patch).copy()
                out[0, 0, 0, 0] = 1.5
                return out

        with pytest.raises(BackendFailure):
            predict_patch(Bad(0.5, spec=SMALL), random_patch(rng))

    def test_load_backend_kinds(self, tmp_path):
        assert load_backend("stub-constant", {"value": 0.3}).identity.startswith("stub-constant")
        assert load_backend("stub-sphere", {"gain": 4.0}).gain == 4.0
        tmp_path.joinpath("r").mkdir()
        assert load_backend("replay", {"dir": tmp_path / "r"}).max_concurrency == 8
        with pytest.raises(ConfigInvalid):
            load_backend("nonsense", {})
        with pytest.raises(ModelLoadFailure):
            load_backend("nn-runtime", {"model": tmp_path / "missing.onnx"})

    def test_patch_shape_override(self):
        backend = load_backend("stub-constant", {"value": 0.2, "patch_shape": [6, 5, 4]})
        assert backend.spec.patch_shape == GridShape(6, 5, 4)
