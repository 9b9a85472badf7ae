"""Numba implementations of the hot kernels.

Connected-component labeling is a raster-scan union-find (two passes);
the distance transform is the separable lower-envelope-of-parabolas
algorithm, generalized to anisotropic spacing. Semantics match
kernels_numpy exactly, including canonical component numbering.
"""

import numpy as np
from numba import njit


def _backward_offsets(connectivity: int) -> np.ndarray:
    """Neighbor offsets that precede the current voxel in C-order raster scan."""
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) == (0, 0, 0):
                    continue
                order = abs(dx) + abs(dy) + abs(dz)
                if connectivity == 6 and order != 1:
                    continue
                if connectivity == 18 and order == 3:
                    continue
                if dx < 0 or (dx == 0 and (dy < 0 or (dy == 0 and dz < 0))):
                    offs.append((dx, dy, dz))
    return np.asarray(offs, dtype=np.int64)


_OFFSETS = {c: _backward_offsets(c) for c in (6, 18, 26)}


@njit(cache=True, inline="always")
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]  # path halving
        x = parent[x]
    return x


@njit(cache=True)
def _label_pass1(mask, offsets, parent, labels):
    nx, ny, nz = mask.shape
    nlab = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k]:
                    continue
                best = -1
                for t in range(offsets.shape[0]):
                    ii = i + offsets[t, 0]
                    jj = j + offsets[t, 1]
                    kk = k + offsets[t, 2]
                    if ii < 0 or jj < 0 or kk < 0 or jj >= ny or kk >= nz:
                        continue
                    if not mask[ii, jj, kk]:
                        continue
                    r = _find(parent, labels[ii, jj, kk])
                    if best == -1:
                        best = r
                    elif r != best:
                        # union by smaller root so each tree's root is the
                        # first-encountered provisional label
                        if r < best:
                            parent[best] = r
                            best = r
                        else:
                            parent[r] = best
                if best == -1:
                    nlab += 1
                    parent[nlab] = nlab
                    labels[i, j, k] = nlab
                else:
                    labels[i, j, k] = best
    return nlab


@njit(cache=True)
def _label_pass2(labels, parent, nlab):
    remap = np.zeros(nlab + 1, dtype=np.int32)
    count = 0
    for p in range(1, nlab + 1):
        r = _find(parent, p)
        if r == p:
            count += 1
            remap[p] = count
    for p in range(1, nlab + 1):
        remap[p] = remap[_find(parent, p)]
    nx, ny, nz = labels.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if labels[i, j, k] != 0:
                    labels[i, j, k] = remap[labels[i, j, k]]
    return count


def label_components(mask: np.ndarray, connectivity: int):
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    labels = np.zeros(mask.shape, dtype=np.int32)
    nfg = int(mask.sum())
    if nfg == 0:
        return labels, 0
    parent = np.zeros(nfg + 1, dtype=np.int32)
    nlab = _label_pass1(mask, _OFFSETS[connectivity], parent, labels)
    count = _label_pass2(labels, parent, nlab)
    return labels, int(count)


@njit(cache=True)
def _stats_kernel(labels, probs, sizes, sums, boxes):
    nx, ny, nz = labels.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                lab = labels[i, j, k]
                if lab == 0:
                    continue
                sizes[lab] += 1
                sums[lab] += probs[i, j, k]
                if i < boxes[lab, 0]:
                    boxes[lab, 0] = i
                if j < boxes[lab, 1]:
                    boxes[lab, 1] = j
                if k < boxes[lab, 2]:
                    boxes[lab, 2] = k
                if i + 1 > boxes[lab, 3]:
                    boxes[lab, 3] = i + 1
                if j + 1 > boxes[lab, 4]:
                    boxes[lab, 4] = j + 1
                if k + 1 > boxes[lab, 5]:
                    boxes[lab, 5] = k + 1


def component_stats(labels: np.ndarray, count: int, probs: np.ndarray):
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    sizes = np.zeros(count + 1, dtype=np.int64)
    sums = np.zeros(count + 1, dtype=np.float64)
    boxes = np.zeros((count + 1, 6), dtype=np.int64)
    boxes[:, :3] = np.iinfo(np.int64).max
    _stats_kernel(labels, probs, sizes, sums, boxes)
    means = np.zeros(count + 1, dtype=np.float64)
    nz = sizes > 0
    nz[0] = False
    means[nz] = sums[nz] / sizes[nz]
    boxes[~nz] = 0
    return sizes, means, boxes


@njit(cache=True)
def _edt_1d(f, d, v, z, pos, n):
    # lower envelope of parabolas y(x) = f[q] + (x - pos[q])^2
    k = 0
    v[0] = 0
    z[0] = -1e308
    z[1] = 1e308
    for q in range(1, n):
        s = 0.0
        while True:
            p = v[k]
            s = ((f[q] + pos[q] * pos[q]) - (f[p] + pos[p] * pos[p])) / (2.0 * pos[q] - 2.0 * pos[p])
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = 1e308
    k = 0
    for q in range(n):
        while z[k + 1] < pos[q]:
            k += 1
        p = v[k]
        d[q] = (pos[q] - pos[p]) * (pos[q] - pos[p]) + f[p]


@njit(cache=True)
def _edt_sq(features, sx, sy, sz, big):
    nx, ny, nz = features.shape
    d = np.empty((nx, ny, nz), dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                d[i, j, k] = 0.0 if features[i, j, k] else big

    nmax = max(nx, max(ny, nz))
    f = np.empty(nmax, dtype=np.float64)
    buf = np.empty(nmax, dtype=np.float64)
    v = np.empty(nmax, dtype=np.int64)
    z = np.empty(nmax + 1, dtype=np.float64)

    pos = np.empty(nx, dtype=np.float64)
    for i in range(nx):
        pos[i] = i * sx
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = d[i, j, k]
            _edt_1d(f, buf, v, z, pos, nx)
            for i in range(nx):
                d[i, j, k] = buf[i]

    pos = np.empty(ny, dtype=np.float64)
    for j in range(ny):
        pos[j] = j * sy
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = d[i, j, k]
            _edt_1d(f, buf, v, z, pos, ny)
            for j in range(ny):
                d[i, j, k] = buf[j]

    pos = np.empty(nz, dtype=np.float64)
    for k in range(nz):
        pos[k] = k * sz
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = d[i, j, k]
            _edt_1d(f, buf, v, z, pos, nz)
            for k in range(nz):
                d[i, j, k] = buf[k]
    return d


def feature_edt(features: np.ndarray, spacing) -> np.ndarray:
    if not features.any():
        raise ValueError("feature_edt requires at least one feature voxel")
    features = np.ascontiguousarray(features, dtype=np.bool_)
    sx, sy, sz = (float(s) for s in spacing)
    nx, ny, nz = features.shape
    # finite stand-in for +inf; strictly above any reachable squared distance
    big = ((nx - 1) * sx + (ny - 1) * sy + (nz - 1) * sz) ** 2 + 1.0
    return np.sqrt(_edt_sq(features, sx, sy, sz, big))


@njit(cache=True)
def _mean_kernel(data, mask, sums):
    nc = data.shape[0]
    nx, ny, nz = mask.shape
    count = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k]:
                    continue
                count += 1
                for c in range(nc):
                    sums[c] += np.float64(data[c, i, j, k])
    return count


@njit(cache=True)
def _var_kernel(data, mask, means, sqs):
    nc = data.shape[0]
    nx, ny, nz = mask.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k]:
                    continue
                for c in range(nc):
                    dev = np.float64(data[c, i, j, k]) - means[c]
                    sqs[c] += dev * dev


def masked_mean_std(data: np.ndarray, mask: np.ndarray):
    # two passes: sum-of-squares in one pass cancels badly for large means
    data = np.ascontiguousarray(data)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    nc = data.shape[0]
    sums = np.zeros(nc, dtype=np.float64)
    count = _mean_kernel(data, mask, sums)
    means = sums / count
    sqs = np.zeros(nc, dtype=np.float64)
    _var_kernel(data, mask, means, sqs)
    return means, np.sqrt(sqs / count), int(count)


@njit(cache=True)
def _zscore_kernel(data, mask, means, stds, out):
    nc = data.shape[0]
    nx, ny, nz = mask.shape
    for c in range(nc):
        if stds[c] < 1e-8:
            continue
        m = means[c]
        s = stds[c]
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    if mask[i, j, k]:
                        out[c, i, j, k] = np.float32((np.float64(data[c, i, j, k]) - m) / s)


def zscore_channels(data: np.ndarray, mask: np.ndarray, means, stds) -> np.ndarray:
    data = np.ascontiguousarray(data)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    out = np.zeros(data.shape, dtype=np.float32)
    _zscore_kernel(data, mask, np.asarray(means, np.float64), np.asarray(stds, np.float64), out)
    return out
