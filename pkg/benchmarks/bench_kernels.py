#!/usr/bin/env python3
"""Benchmark the SSIM hot kernel: numba @njit path vs pure-numpy fallback.

Times single-pair SSIM maps at several image sizes plus an all-pairs
diversity group (32 images, 496 pairs).  Run after installing the package:

    python3 benchmarks/bench_kernels.py [--sizes 128 256 512] [--repeats 5]

The dispatched path used by the library follows the STYLEAUG_NUMBA env flag;
this script calls both implementations directly.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from styleaug import _kernels as K
from styleaug.metrics import pairwise_diversity

WIN, C1, C2 = 7, (0.01 * 1.0) ** 2, (0.03 * 1.0) ** 2


def time_fn(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_single_pairs(sizes: list[int], repeats: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'size':>10} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for size in sizes:
        a = rng.random((size, size))
        b = rng.random((size, size))
        t_np = time_fn(K._ssim_map_numpy, a, b, WIN, C1, C2, repeats=repeats)
        if K._HAVE_NUMBA:
            K._ssim_map_numba(a, b, WIN, C1, C2)  # warm the JIT
            t_nb = time_fn(K._ssim_map_numba, a, b, WIN, C1, C2, repeats=repeats)
            print(f"{size:>7}px {t_np*1e3:>12.2f} {t_nb*1e3:>12.2f} {t_np/t_nb:>8.2f}x")
        else:
            print(f"{size:>7}px {t_np*1e3:>12.2f} {'n/a':>12} {'n/a':>9}")


def bench_diversity_group(size: int, repeats: int) -> None:
    rng = np.random.default_rng(1)
    group = {"g": [rng.random((size, size)) for _ in range(32)]}

    def run():
        pairwise_diversity(group, metric="ssim", data_range=1.0)

    results = {}
    modes = (True, False) if K._HAVE_NUMBA else (False,)
    saved = K.USE_NUMBA
    try:
        for use_numba in modes:
            K.USE_NUMBA = use_numba
            run()  # warm
            results["numba" if use_numba else "numpy"] = time_fn(run, repeats=repeats)
    finally:
        K.USE_NUMBA = saved
    line = ", ".join(f"{k}: {v*1e3:.1f} ms" for k, v in results.items())
    print(f"\ngroup of 32 images ({size}x{size}, 496 pairs): {line}")
    if len(results) == 2:
        print(f"speedup: {results['numpy'] / results['numba']:.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256, 512])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--group-size", type=int, default=64)
    args = parser.parse_args()

    print(f"numba available: {K._HAVE_NUMBA}, dispatch default: "
          f"{'numba' if K.USE_NUMBA else 'numpy'}")
    bench_single_pairs(args.sizes, args.repeats)
    bench_diversity_group(args.group_size, args.repeats)


if __name__ == "__main__":
    main()
