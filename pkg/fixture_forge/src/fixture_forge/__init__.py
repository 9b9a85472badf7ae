"""Synthetic test fixtures: phantom NIfTI cases and a toy exchange-format model."""

from .onnx_export import TOY_BIAS, TOY_WEIGHTS, export_toy_model, toy_response
from .synth import FixtureSpec, generate_case, ground_truth, synthesize

__version__ = "0.1.0"

__all__ = [
    "FixtureSpec",
    "TOY_BIAS",
    "TOY_WEIGHTS",
    "export_toy_model",
    "generate_case",
    "ground_truth",
    "synthesize",
    "toy_response",
    "__version__",
]
