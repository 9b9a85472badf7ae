"""Tiny deterministic NIfTI-1 writer.

Intentionally independent of the consuming pipeline's reader so the two
implementations cross-check each other through the file format. Writes
single-file .nii/.nii.gz, float32 or uint8, little-endian, sform affine,
gzip with zeroed mtime (byte-identical output for identical input).
"""

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import IoFailure

_DTYPE_CODES = {"float32": (16, 32), "uint8": (2, 8)}


def write_nifti(path, data: np.ndarray, affine: np.ndarray) -> None:
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise IoFailure(f"writer only handles 3D arrays, got shape {data.shape}")
    if data.dtype.name not in _DTYPE_CODES:
        raise IoFailure(f"writer only handles float32/uint8, got {data.dtype}")
    datatype, bitpix = _DTYPE_CODES[data.dtype.name]
    affine = np.asarray(affine, dtype=np.float64)
    pixdim = np.sqrt((affine[:3, :3] ** 2).sum(axis=0))

    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)                      # sizeof_hdr
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)  # dim
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)                  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                    # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)                    # scl_inter
    struct.pack_into("<B", hdr, 123, 2)                      # xyzt_units: mm
    hdr[148:148 + 13] = b"fixture-forge"                     # descrip
    struct.pack_into("<h", hdr, 252, 0)                      # qform_code
    struct.pack_into("<h", hdr, 254, 1)                      # sform_code
    struct.pack_into("<4f", hdr, 280, *affine[0])            # srow_x
    struct.pack_into("<4f", hdr, 296, *affine[1])
    struct.pack_into("<4f", hdr, 312, *affine[2])
    hdr[344:348] = b"n+1\x00"

    payload = bytes(hdr) + b"\x00" * 4 + data.astype(data.dtype.newbyteorder("<")).tobytes(order="F")
    try:
        if path.suffix == ".gz":
            with open(path, "wb") as raw:
                with gzip.GzipFile(filename="", fileobj=raw, mode="wb",
                                   compresslevel=6, mtime=0) as gz:
                    gz.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
