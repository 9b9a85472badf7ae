import numpy as np
import pytest

from fixture_forge.onnx_export import (
    TOY_BIAS,
    TOY_WEIGHTS,
    export_toy_model,
    toy_model_bytes,
    toy_response,
)


class TestToyModel:
    def test_export_is_deterministic(self, tmp_path):
        a = export_toy_model(tmp_path / "a.onnx").read_bytes()
        b = export_toy_model(tmp_path / "b.onnx").read_bytes()
        assert a == b == toy_model_bytes()

    def test_zero_input_constant_response(self):
        out = toy_response(np.zeros((4, 2, 2, 2), dtype=np.float32))
        expected = 1.0 / (1.0 + np.exp(-TOY_BIAS.astype(np.float64)))
        for k in range(3):
            assert np.abs(out[k] - expected[k]).max() < 1e-12
        assert out[0].flat[0] == pytest.approx(0.5)

    def test_response_range(self):
        rng = np.random.default_rng(3)
        out = toy_response(rng.normal(scale=2.0, size=(4, 6, 6, 6)))
        assert out.min() > 0.0 and out.max() < 1.0
        # extreme inputs saturate but never escape [0, 1]
        extreme = toy_response(rng.normal(scale=500.0, size=(4, 4, 4, 4)))
        assert extreme.min() >= 0.0 and extreme.max() <= 1.0

    def test_weights_shape_contract(self):
        assert TOY_WEIGHTS.shape == (3, 4)
        assert TOY_BIAS.shape == (3,)
