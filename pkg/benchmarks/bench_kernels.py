#!/usr/bin/env python3
"""Benchmark the numba kernels against the numpy/scipy fallback path.

Times the hot kernels on realistic scan-scale inputs (240x240x155 by
default): connected-component labeling, per-component statistics, the exact
Euclidean distance transform, and masked z-score normalization.

Usage:
    python benchmarks/bench_kernels.py [--size small|full] [--repeats N]
"""

import argparse
import time

import numpy as np

from tumorseg._accel import kernels_numba, kernels_numpy


def build_inputs(shape, seed=0):
    rng = np.random.default_rng(seed)
    grids = np.indices(shape, dtype=np.float64)
    center = tuple(s / 2 for s in shape)
    dist = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, center)))
    mask = dist <= min(shape) * 0.22
    noise = rng.random(shape) < 0.002
    mask = mask | noise
    probs = np.clip(rng.normal(0.7, 0.2, size=shape), 0, 1).astype(np.float32)
    volume = rng.normal(100.0, 25.0, size=(4,) + shape).astype(np.float32)
    fg = dist <= min(shape) * 0.45
    return mask, probs, volume, fg


def timeit(fn, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", choices=("small", "full"), default="full")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    shape = (240, 240, 155) if args.size == "full" else (96, 96, 64)
    print(f"grid {shape}, best of {args.repeats} runs\n")
    mask, probs, volume, fg = build_inputs(shape)
    print(f"foreground voxels: {int(mask.sum()):,} of {mask.size:,}")

    labels26, count = kernels_numba.label_components(mask, 26)
    boundary = mask & ~np.pad(mask, 1)[2:, 1:-1, 1:-1]  # crude features for EDT

    cases = [
        ("label_components conn=26",
         lambda k: k.label_components(mask, 26)),
        ("label_components conn=6",
         lambda k: k.label_components(mask, 6)),
        ("component_stats",
         lambda k: k.component_stats(labels26, count, probs)),
        ("feature_edt",
         lambda k: k.feature_edt(boundary, (1.0, 1.0, 1.0))),
        ("masked_mean_std",
         lambda k: k.masked_mean_std(volume, fg)),
        ("zscore_channels",
         lambda k: k.zscore_channels(volume, fg, *kernels_numpy.masked_mean_std(volume, fg)[:2])),
    ]

    # trigger JIT compilation outside the timed region
    for _, fn in cases:
        fn(kernels_numba)

    header = f"{'kernel':<28}{'numba':>10}{'numpy':>10}{'speedup':>9}"
    print("\n" + header)
    print("-" * len(header))
    for name, fn in cases:
        t_nb, _ = timeit(lambda: fn(kernels_numba), args.repeats)
        t_np, _ = timeit(lambda: fn(kernels_numpy), args.repeats)
        print(f"{name:<28}{t_nb * 1e3:>8.1f}ms{t_np * 1e3:>8.1f}ms{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
