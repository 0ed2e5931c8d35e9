#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times each hot kernel on shapes representative of desk-scale training and
prints a table with the speedup. Run as:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from ecenet import kernels

CASES = [
    # (kernel, args builder, label)
    ("dwconv3x3_forward",
     lambda rng: (rng.standard_normal((256, 16, 16)).astype(np.float32),
                  rng.standard_normal((256, 3, 3)).astype(np.float32)),
     "dwconv3x3 fwd 256x16x16"),
    ("dwconv3x3_backward",
     lambda rng: (rng.standard_normal((256, 16, 16)).astype(np.float32),
                  rng.standard_normal((256, 3, 3)).astype(np.float32),
                  rng.standard_normal((256, 16, 16)).astype(np.float32)),
     "dwconv3x3 bwd 256x16x16"),
    ("dwconv3x3_forward",
     lambda rng: (rng.standard_normal((4032, 2, 2)).astype(np.float32),
                  rng.standard_normal((4032, 3, 3)).astype(np.float32)),
     "dwconv3x3 fwd 4032x2x2 (ghost)"),
    ("avgpool2d_forward",
     lambda rng: (rng.standard_normal((64, 16, 16)).astype(np.float32), 2, 2),
     "avgpool fwd 64x16x16 -> 2x2"),
    ("avgpool2d_backward",
     lambda rng: (rng.standard_normal((64, 2, 2)).astype(np.float32), 16, 16),
     "avgpool bwd 2x2 -> 16x16"),
    ("bilinear_forward",
     lambda rng: (rng.standard_normal((4, 16, 16)).astype(np.float32), 64, 64),
     "bilinear fwd 16 -> 64"),
    ("bilinear_backward",
     lambda rng: (rng.standard_normal((4, 64, 64)).astype(np.float32), 16, 16),
     "bilinear bwd 64 -> 16"),
]


def time_fn(fn, args, repeats):
    fn(*args)  # warmup / jit
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.ACTIVE_BACKEND}")
    if not kernels.HAVE_NUMBA:
        print("numba unavailable: timing the numpy path only")

    header = f"{'kernel':35s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, build, label in CASES:
        call_args = build(rng)
        t_np = time_fn(kernels.NUMPY_KERNELS[name], call_args, args.repeats)
        if kernels.HAVE_NUMBA:
            t_nb = time_fn(kernels.NUMBA_KERNELS[name], call_args, args.repeats)
            print(f"{label:35s} {t_np * 1e6:10.1f}us {t_nb * 1e6:10.1f}us "
                  f"{t_np / t_nb:7.1f}x")
        else:
            print(f"{label:35s} {t_np * 1e6:10.1f}us {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
