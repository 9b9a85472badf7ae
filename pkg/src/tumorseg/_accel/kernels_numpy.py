"""Pure numpy/scipy implementations of the hot kernels.

Reference semantics for the numba path; also the fallback when numba is
unavailable or disabled via ``TUMORSEG_ACCEL=numpy``.
"""

import numpy as np
from scipy import ndimage

_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


def canonical_relabel(labels: np.ndarray, count: int) -> np.ndarray:
    """Renumber positive labels 1..count by first occurrence in C-order raster scan."""
    if count == 0:
        return labels
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    first = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable")
    remap = np.empty(count + 1, dtype=np.int32)
    remap[0] = 0
    remap[1:][order] = np.arange(1, count + 1, dtype=np.int32)
    return remap[labels]


def label_components(mask: np.ndarray, connectivity: int):
    """Label connected components of a 3D boolean mask.

    Returns (labels, count) with labels int32, components numbered 1..count
    in raster order of first occurrence.
    """
    structure = ndimage.generate_binary_structure(3, _CONNECTIVITY_RANK[connectivity])
    labels, count = ndimage.label(mask, structure=structure)
    labels = labels.astype(np.int32, copy=False)
    return canonical_relabel(labels, count), count


def component_stats(labels: np.ndarray, count: int, probs: np.ndarray):
    """Per-component voxel count, mean probability, and bounding box.

    Returns (sizes[count+1] int64, means[count+1] float64, boxes[count+1, 6] int64)
    indexed by label id; entry 0 is unused. Boxes are (lo_x, lo_y, lo_z,
    hi_x, hi_y, hi_z), hi exclusive.
    """
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=count + 1).astype(np.int64)
    sums = np.bincount(flat, weights=probs.ravel().astype(np.float64), minlength=count + 1)
    means = np.zeros(count + 1, dtype=np.float64)
    nz = sizes > 0
    nz[0] = False
    means[nz] = sums[nz] / sizes[nz]
    sizes[0] = 0  # background entry is unused

    boxes = np.zeros((count + 1, 6), dtype=np.int64)
    for lab, slc in enumerate(ndimage.find_objects(labels, max_label=count), start=1):
        if slc is None:
            continue
        boxes[lab] = (slc[0].start, slc[1].start, slc[2].start,
                      slc[0].stop, slc[1].stop, slc[2].stop)
    return sizes, means, boxes


def feature_edt(features: np.ndarray, spacing) -> np.ndarray:
    """Euclidean distance from every voxel to the nearest True voxel of `features`."""
    if not features.any():
        raise ValueError("feature_edt requires at least one feature voxel")
    spacing = np.asarray(spacing, dtype=np.float64)
    return ndimage.distance_transform_edt(~features, sampling=spacing)


def masked_mean_std(data: np.ndarray, mask: np.ndarray):
    """Per-channel mean and population std over masked voxels of (C, X, Y, Z) data."""
    sel = data[:, mask].astype(np.float64)
    return sel.mean(axis=1), sel.std(axis=1), int(mask.sum())


def zscore_channels(data: np.ndarray, mask: np.ndarray, means, stds) -> np.ndarray:
    """Z-score each channel over masked voxels; zeros elsewhere.

    Channels with std below 1e-8 are zeroed entirely (degenerate-contrast rule).
    """
    out = np.zeros_like(data, dtype=np.float32)
    for c in range(data.shape[0]):
        if stds[c] < 1e-8:
            continue
        out[c][mask] = ((data[c][mask].astype(np.float64) - means[c]) / stds[c]).astype(np.float32)
    return out
