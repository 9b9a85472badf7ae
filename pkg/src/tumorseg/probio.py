"""Compact binary container for probability maps.

Layout (little-endian): magic ``TSPM``, u16 version, u8 dtype code
(1 = float32), u8 channel count, three u32 spatial dims, 16 f64 affine
entries (row-major), then per channel the spatial block in x-fastest /
z-slowest order. Self-describing enough for `postprocess`/`tune` to run
without the originating pipeline in memory.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .volgrid import ProbabilityMap

MAGIC = b"TSPM"
VERSION = 1
_DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHBBIII")

FILE_SUFFIX = ".tspm"


def write_probability_map(path, pm: ProbabilityMap, affine=None) -> None:
    path = Path(path)
    affine = np.eye(4) if affine is None else np.asarray(affine, dtype=np.float64)
    nx, ny, nz = pm.shape.as_tuple()
    header = _HEADER.pack(MAGIC, VERSION, _DTYPE_F32, pm.data.shape[0], nx, ny, nz)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(affine.astype("<f8").tobytes())
            for c in range(pm.data.shape[0]):
                fh.write(pm.data[c].astype("<f4").tobytes(order="F"))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_probability_map(path) -> tuple[ProbabilityMap, np.ndarray]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise IoFailure(f"{path}: truncated header")
            magic, version, dtype, channels, nx, ny, nz = _HEADER.unpack(head)
            if magic != MAGIC:
                raise IoFailure(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise IoFailure(f"{path}: unsupported version {version}")
            if dtype != _DTYPE_F32:
                raise IoFailure(f"{path}: unsupported dtype code {dtype}")
            affine = np.frombuffer(fh.read(16 * 8), dtype="<f8").reshape(4, 4).copy()
            count = nx * ny * nz
            data = np.empty((channels, nx, ny, nz), dtype=np.float32)
            for c in range(channels):
                block = fh.read(count * 4)
                if len(block) < count * 4:
                    raise IoFailure(f"{path}: truncated channel {c}")
                data[c] = np.frombuffer(block, dtype="<f4").reshape((nx, ny, nz), order="F")
            return ProbabilityMap(data), affine
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
