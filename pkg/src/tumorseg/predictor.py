"""Prediction backends: 4-channel input patches to 3-channel probability patches.

The pipeline is decoupled from any ML runtime through this interface; stub
backends make every downstream stage testable without trained models, the
replay backend serves recorded outputs for golden-file tests, and the
nn-runtime backend (see nnruntime) executes serialized exchange-format models.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import BackendFailure, ConfigInvalid, ModelLoadFailure, ShapeMismatch
from .volgrid import GridShape

DEFAULT_PATCH_SHAPE = GridShape(128, 128, 128)

# which input channel each output channel's stub rule reads:
# TC <- T1Gd, WT <- T2-FLAIR, ET <- T1 (synthetic coding, not MRI physics)
SPHERE_STUB_SOURCES = (1, 3, 0)


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry and channel contract of a backend."""

    patch_shape: GridShape = DEFAULT_PATCH_SHAPE
    in_channels: int = 4
    out_channels: int = 3

    def __post_init__(self):
        if self.in_channels != 4 or self.out_channels != 3:
            raise ConfigInvalid("backends must map 4 input channels to 3 output channels")


class PredictorBackend:
    """Base class for backends; subclasses implement _predict.

    `max_concurrency` is a hint: 1 means the engine must serialize calls,
    larger values allow that many concurrent predict_patch callers.
    """

    def __init__(self, spec: PatchSpec, identity: str, max_concurrency: int = 8):
        if max_concurrency < 1:
            raise ConfigInvalid("max_concurrency must be >= 1")
        self.spec = spec
        self.identity = identity
        self.max_concurrency = max_concurrency

    def predict_patch(self, patch: np.ndarray) -> np.ndarray:
        patch = np.asarray(patch)
        expected = (self.spec.in_channels,) + self.spec.patch_shape.as_tuple()
        if patch.shape != expected:
            raise ShapeMismatch(f"{self.identity}: patch shape {patch.shape} != {expected}")
        try:
            out = self._predict(patch)
        except (ShapeMismatch, BackendFailure, ModelLoadFailure):
            raise
        except Exception as exc:
            raise BackendFailure(f"{self.identity}: {exc}") from exc
        out = np.asarray(out, dtype=np.float32)
        if out.shape != (self.spec.out_channels,) + patch.shape[1:]:
            raise BackendFailure(
                f"{self.identity}: output shape {out.shape} invalid for input {patch.shape}"
            )
        if out.size and (out.min() < 0.0 or out.max() > 1.0):
            raise BackendFailure(f"{self.identity}: output probabilities escape [0,1]")
        return out

    def _predict(self, patch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def predict_patch(backend: PredictorBackend, patch: np.ndarray) -> np.ndarray:
    """Run one patch through a backend with full contract validation."""
    return backend.predict_patch(patch)


class ConstantBackend(PredictorBackend):
    """Emits a fixed probability on every voxel of every channel."""

    def __init__(self, values, spec: PatchSpec = PatchSpec(), identity: str | None = None,
                 max_concurrency: int = 8):
        values = np.broadcast_to(np.asarray(values, dtype=np.float32), (3,)).copy()
        if values.min() < 0.0 or values.max() > 1.0:
            raise ConfigInvalid(f"constant backend values must lie in [0,1], got {values}")
        super().__init__(spec, identity or f"stub-constant[{values.tolist()}]", max_concurrency)
        self.values = values

    def _predict(self, patch):
        shape = (3,) + patch.shape[1:]
        return np.broadcast_to(self.values.reshape(3, 1, 1, 1), shape).copy()


class SphereStubBackend(PredictorBackend):
    """Pointwise intensity-to-probability rule for spherical phantom inputs.

    Output channel k reads one input channel and applies
    ``sigmoid(gain * (value - bias))`` voxel by voxel. Being pointwise, the
    rule is exactly flip-equivariant: predict(flip(p, S)) == flip(predict(p), S)
    for every input, which downstream TTA tests rely on. On phantoms whose
    tumor intensity plateaus well above the z-scored bias the response is
    ~1 inside the sphere with a smooth falloff across the boundary shell.
    """

    def __init__(self, gain: float = 3.0, bias: float = 1.2,
                 sources=SPHERE_STUB_SOURCES, spec: PatchSpec = PatchSpec(),
                 identity: str | None = None, max_concurrency: int = 8):
        if gain <= 0:
            raise ConfigInvalid(f"gain must be positive, got {gain}")
        super().__init__(spec, identity or f"stub-sphere[g={gain},b={bias}]", max_concurrency)
        self.gain = float(gain)
        self.bias = float(bias)
        self.sources = tuple(int(s) for s in sources)
        if len(self.sources) != 3 or any(not 0 <= s < 4 for s in self.sources):
            raise ConfigInvalid(f"sources must be 3 input-channel indices, got {sources}")

    def _predict(self, patch):
        out = np.empty((3,) + patch.shape[1:], dtype=np.float32)
        for k, src in enumerate(self.sources):
            out[k] = expit(self.gain * (patch[src].astype(np.float64) - self.bias))
        return out


def patch_key(patch: np.ndarray) -> str:
    """Content hash identifying a patch regardless of window order."""
    arr = np.ascontiguousarray(patch, dtype=np.float32)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


class ReplayBackend(PredictorBackend):
    """Serves recorded patch outputs, keyed by input-patch content hash."""

    def __init__(self, directory, spec: PatchSpec = PatchSpec(), identity: str | None = None,
                 max_concurrency: int = 8):
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigInvalid(f"replay directory does not exist: {directory}")
        super().__init__(spec, identity or f"replay[{directory.name}]", max_concurrency)
        self.directory = directory
        self._verified = False

    def _predict(self, patch):
        if not self._verified:
            if not any(self.directory.glob("*.npy")):
                raise ModelLoadFailure(f"{self.directory} contains no recordings")
            self._verified = True
        path = self.directory / f"{patch_key(patch)}.npy"
        if not path.exists():
            raise BackendFailure(f"no recording for patch {path.stem[:12]}… in {self.directory}")
        return np.load(path)


class RecordingBackend(PredictorBackend):
    """Wraps another backend and records its outputs for later replay."""

    def __init__(self, inner: PredictorBackend, directory):
        super().__init__(inner.spec, f"{inner.identity}+record", inner.max_concurrency)
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _predict(self, patch):
        out = self.inner.predict_patch(patch)
        np.save(self.directory / f"{patch_key(patch)}.npy", out)
        return out


def _patch_spec_from_config(config: dict) -> PatchSpec:
    shape = config.get("patch_shape")
    if shape is None:
        return PatchSpec()
    return PatchSpec(patch_shape=GridShape.of(shape))


def load_backend(kind: str, config: dict | None = None) -> PredictorBackend:
    """Instantiate a backend from its config-file block."""
    config = dict(config or {})
    spec = _patch_spec_from_config(config)
    common = {
        "spec": spec,
        "identity": config.get("identity"),
        "max_concurrency": int(config.get("max_concurrency", 8)),
    }
    if kind == "stub-constant":
        return ConstantBackend(config.get("value", 0.5), **common)
    if kind == "stub-sphere":
        return SphereStubBackend(
            gain=float(config.get("gain", 3.0)),
            bias=float(config.get("bias", 1.2)),
            sources=config.get("sources", SPHERE_STUB_SOURCES),
            **common,
        )
    if kind == "replay":
        if "dir" not in config:
            raise ConfigInvalid("replay backend requires a 'dir' entry")
        return ReplayBackend(config["dir"], **common)
    if kind == "nn-runtime":
        if "model" not in config:
            raise ConfigInvalid("nn-runtime backend requires a 'model' entry")
        from .nnruntime import OnnxBackend

        return OnnxBackend(config["model"], **common)
    raise ConfigInvalid(f"unknown backend kind {kind!r}")
