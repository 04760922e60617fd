"""Benchmark the matching engine: numpy backend vs compiled kernel.

Usage:
    python3 benchmarks/bench_patchmatch.py [--size 192] [--dims 24]
        [--iterations 4] [--threads 1 2 4 8] [--mode hard]

Prints per-backend wall time for one full matching run and the speedup of
the compiled kernel over the numpy engine at each thread count.
"""

import argparse
import time

import numpy as np

import cmfdkit.patchmatch as pm
from cmfdkit.patchmatch import PMConfig, ScaleFeatures


def make_features(size, dims, seed=0):
    rng = np.random.default_rng(seed)
    scales = (0.75, 1.0, 1.5)
    maps = []
    for s in scales:
        hh = int(np.floor(s * size + 0.5))
        maps.append(rng.standard_normal((hh, hh, dims)))
    return ScaleFeatures(maps=tuple(maps), scales=scales)


def time_run(feats, cfg, backend, threads, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        pm.run(feats, cfg, threads=threads, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=192)
    ap.add_argument("--dims", type=int, default=24)
    ap.add_argument("--iterations", type=int, default=4)
    ap.add_argument("--mode", choices=("hard", "soft"), default="hard")
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--repeats", type=int, default=2)
    args = ap.parse_args()

    feats = make_features(args.size, args.dims)
    cfg = PMConfig(iterations=args.iterations, mode=args.mode, seed=0)
    backends = pm.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"image {args.size}x{args.size}, {args.dims} feature dims, "
          f"{args.iterations} iterations, {args.mode} mode")

    t_py = time_run(feats, cfg, "python", 1, args.repeats)
    print(f"python backend:            {t_py:8.2f} s")
    if "compiled" not in backends:
        print("compiled backend not built; skipping comparison")
        return
    for th in args.threads:
        t_c = time_run(feats, cfg, "compiled", th, args.repeats)
        print(f"compiled backend ({th:2d} thr): {t_c:8.2f} s   "
              f"speedup {t_py / t_c:5.1f}x")


if __name__ == "__main__":
    main()
