"""Minimal NIfTI-1 I/O for the pipeline's needs.

Covers single-file ``.nii`` / ``.nii.gz`` volumes with int8/16/32, uint8/16/32,
float32/64 payloads, scl_slope/scl_inter rescaling, and qform/sform affines.
Everything else (DICOM, NIfTI-2, .hdr/.img pairs, exotic dtypes) is out of
scope. Written files are deterministic byte-for-byte: fixed header fields and
gzip with zeroed mtime.

Voxel data is stored x-fastest (Fortran order) on disk per the NIfTI spec;
arrays returned and accepted here are indexed ``[x, y, z]`` or ``[x, y, z, t]``.
"""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from .errors import AffineMismatch, IoFailure, MissingModality, NonFiniteVoxel, ShapeMismatch
from .volgrid import LabelMap, MODALITY_NAMES, MultimodalVolume

_HDR_SIZE = 348
_VOX_OFFSET = 352

_HDR_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "<i4"),
    ("session_error", "<i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "<i2", 8),
    ("intent_p1", "<f4"),
    ("intent_p2", "<f4"),
    ("intent_p3", "<f4"),
    ("intent_code", "<i2"),
    ("datatype", "<i2"),
    ("bitpix", "<i2"),
    ("slice_start", "<i2"),
    ("pixdim", "<f4", 8),
    ("vox_offset", "<f4"),
    ("scl_slope", "<f4"),
    ("scl_inter", "<f4"),
    ("slice_end", "<i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "<f4"),
    ("cal_min", "<f4"),
    ("slice_duration", "<f4"),
    ("toffset", "<f4"),
    ("glmax", "<i4"),
    ("glmin", "<i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "<i2"),
    ("sform_code", "<i2"),
    ("quatern_b", "<f4"),
    ("quatern_c", "<f4"),
    ("quatern_d", "<f4"),
    ("qoffset_x", "<f4"),
    ("qoffset_y", "<f4"),
    ("qoffset_z", "<f4"),
    ("srow_x", "<f4", 4),
    ("srow_y", "<f4", 4),
    ("srow_z", "<f4", 4),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert _HDR_DTYPE.itemsize == _HDR_SIZE

_DTYPE_CODES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    256: np.dtype(np.int8),
    512: np.dtype(np.uint16),
    768: np.dtype(np.uint32),
}
_CODE_FOR_DTYPE = {v: k for k, v in _DTYPE_CODES.items()}


def _open_for_read(path: Path):
    raw = open(path, "rb")
    head = raw.read(2)
    raw.seek(0)
    if head == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=raw)
    return raw


def _quaternion_affine(hdr) -> np.ndarray:
    b = float(hdr["quatern_b"])
    c = float(hdr["quatern_c"])
    d = float(hdr["quatern_d"])
    a = np.sqrt(max(0.0, 1.0 - b * b - c * c - d * d))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])
    pixdim = np.asarray(hdr["pixdim"], dtype=np.float64).reshape(-1)
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    affine = np.eye(4)
    affine[:3, 0] = rot[:, 0] * pixdim[1]
    affine[:3, 1] = rot[:, 1] * pixdim[2]
    affine[:3, 2] = rot[:, 2] * pixdim[3] * qfac
    affine[:3, 3] = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
    return affine


def read_nifti(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a .nii/.nii.gz file; returns (data, affine).

    Data comes back as float64 when slope/intercept scaling applies, else in
    the (byte-order-normalized) stored dtype, shaped (nx, ny, nz) or
    (nx, ny, nz, nt).
    """
    path = Path(path)
    try:
        with _open_for_read(path) as fh:
            hdr_bytes = fh.read(_HDR_SIZE)
            if len(hdr_bytes) < _HDR_SIZE:
                raise IoFailure(f"{path}: truncated NIfTI header")
            hdr = np.frombuffer(hdr_bytes, dtype=_HDR_DTYPE)[0]
            swapped = False
            if int(hdr["sizeof_hdr"]) != _HDR_SIZE:
                hdr = np.frombuffer(hdr_bytes, dtype=_HDR_DTYPE.newbyteorder())[0]
                swapped = True
                if int(hdr["sizeof_hdr"]) != _HDR_SIZE:
                    raise IoFailure(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
            magic = bytes(hdr["magic"])
            if not magic.startswith(b"n+1"):
                raise IoFailure(f"{path}: unsupported NIfTI magic {magic!r} (need single-file n+1)")

            ndim = int(hdr["dim"][0])
            if ndim not in (3, 4):
                raise IoFailure(f"{path}: unsupported dimensionality {ndim}")
            dims = tuple(int(v) for v in hdr["dim"][1:1 + ndim])
            code = int(hdr["datatype"])
            if code not in _DTYPE_CODES:
                raise IoFailure(f"{path}: unsupported NIfTI datatype code {code}")
            dtype = _DTYPE_CODES[code]
            if swapped:
                dtype = dtype.newbyteorder()

            offset = int(hdr["vox_offset"])
            fh.read(max(0, offset - _HDR_SIZE))
            count = int(np.prod(dims))
            payload = fh.read(count * dtype.itemsize)
            if len(payload) < count * dtype.itemsize:
                raise IoFailure(f"{path}: truncated voxel payload")
            data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
            data = data.astype(dtype.newbyteorder("="), copy=False)

            slope = float(hdr["scl_slope"])
            inter = float(hdr["scl_inter"])
            if np.isfinite(slope) and slope != 0.0 and (slope != 1.0 or inter != 0.0):
                data = data * np.float64(slope) + np.float64(inter)

            if int(hdr["sform_code"]) > 0:
                affine = np.eye(4)
                affine[0] = hdr["srow_x"]
                affine[1] = hdr["srow_y"]
                affine[2] = hdr["srow_z"]
            elif int(hdr["qform_code"]) > 0:
                affine = _quaternion_affine(hdr)
            else:
                pixdim = np.asarray(hdr["pixdim"], dtype=np.float64).reshape(-1)
                affine = np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0, 1.0])
            return data, affine
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def write_nifti(path, data: np.ndarray, affine: np.ndarray, dtype=None) -> None:
    """Write (nx, ny, nz) or (nx, ny, nz, nt) data as a single-file NIfTI-1."""
    path = Path(path)
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise IoFailure(f"can only write 3D/4D volumes, got shape {data.shape}")
    dtype = np.dtype(dtype) if dtype is not None else data.dtype.newbyteorder("=")
    if dtype not in _CODE_FOR_DTYPE:
        raise IoFailure(f"unsupported output dtype {dtype}")
    data = data.astype(dtype.newbyteorder("<"), copy=False)
    affine = np.asarray(affine, dtype=np.float64)

    hdr = np.zeros(1, dtype=_HDR_DTYPE)[0]
    hdr["sizeof_hdr"] = _HDR_SIZE
    hdr["regular"] = b"r"
    dim = np.zeros(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1:1 + data.ndim] = data.shape
    dim[1 + data.ndim:] = 1
    hdr["dim"] = dim
    hdr["datatype"] = _CODE_FOR_DTYPE[np.dtype(dtype)]
    hdr["bitpix"] = dtype.itemsize * 8
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = np.sqrt((affine[:3, :3] ** 2).sum(axis=0))
    pixdim[4:] = 1.0
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = float(_VOX_OFFSET)
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["descrip"] = b"tumorseg"
    hdr["qform_code"] = 0
    hdr["sform_code"] = 1
    hdr["srow_x"] = affine[0].astype(np.float32)
    hdr["srow_y"] = affine[1].astype(np.float32)
    hdr["srow_z"] = affine[2].astype(np.float32)
    hdr["magic"] = b"n+1"

    blob = hdr.tobytes() + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    try:
        if path.suffix == ".gz":
            with open(path, "wb") as raw:
                with gzip.GzipFile(
                    filename="", fileobj=raw, mode="wb", compresslevel=6, mtime=0
                ) as gz:
                    gz.write(blob)
        else:
            with open(path, "wb") as fh:
                fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def load_volume(paths) -> MultimodalVolume:
    """Load a 4-modality volume from four single-channel files or one 4-channel file.

    Modality affines must agree within 1e-4 per element; shapes must match
    exactly; any NaN/Inf voxel is rejected.
    """
    if isinstance(paths, (str, Path)):
        data, affine = read_nifti(paths)
        if data.ndim != 4 or data.shape[3] != 4:
            raise MissingModality(
                f"{paths}: expected a 4-channel volume, got shape {data.shape}"
            )
        stacked = np.moveaxis(data, 3, 0)
        if not np.isfinite(stacked).all():
            raise NonFiniteVoxel(f"{paths}: volume contains NaN/Inf voxels")
        return MultimodalVolume(stacked.astype(np.float32), affine)

    paths = [Path(p) for p in paths]
    if len(paths) != 4:
        raise MissingModality(f"expected 4 modality files, got {len(paths)}")
    channels = []
    ref_affine = None
    ref_shape = None
    for name, p in zip(MODALITY_NAMES, paths):
        if not p.exists():
            raise MissingModality(f"missing {name} file: {p}")
        data, affine = read_nifti(p)
        if data.ndim != 3:
            raise ShapeMismatch(f"{p}: expected a 3D modality image, got shape {data.shape}")
        if ref_shape is None:
            ref_shape, ref_affine = data.shape, affine
        else:
            if data.shape != ref_shape:
                raise ShapeMismatch(f"{p}: shape {data.shape} != {ref_shape}")
            if np.abs(affine - ref_affine).max() > 1e-4:
                raise AffineMismatch(f"{p}: affine differs from first modality by > 1e-4")
        if not np.isfinite(data).all():
            raise NonFiniteVoxel(f"{p}: volume contains NaN/Inf voxels")
        channels.append(data.astype(np.float32))
    return MultimodalVolume(np.stack(channels), ref_affine)


def save_volume(vol: MultimodalVolume, path) -> None:
    """Write a MultimodalVolume as one 4-channel float32 NIfTI file."""
    write_nifti(path, np.moveaxis(vol.data, 0, 3), vol.affine, dtype=np.float32)


def load_cropped_volume(path) -> MultimodalVolume:
    """Read back a 4-channel volume written by save_volume."""
    return load_volume(path)


def save_labelmap(label_map: LabelMap, path) -> None:
    """Write a LabelMap as uint8 NIfTI; round-trips voxel-identically."""
    write_nifti(path, label_map.data, label_map.affine, dtype=np.uint8)


def load_labelmap(path) -> LabelMap:
    data, affine = read_nifti(path)
    if data.ndim != 3:
        raise ShapeMismatch(f"{path}: expected a 3D label image, got shape {data.shape}")
    values = np.rint(np.asarray(data)).astype(np.int64)
    if not np.array_equal(values, np.asarray(data)):
        raise IoFailure(f"{path}: label image has non-integer values")
    if values.min(initial=0) < 0 or values.max(initial=0) > 3:
        raise IoFailure(f"{path}: labels outside {{0,1,2,3}}")
    return LabelMap(values.astype(np.uint8), affine)
