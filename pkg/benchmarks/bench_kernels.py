#!/usr/bin/env python3
"""Benchmark the compiled divided-difference kernels against the numpy
fallback.

The dd weight matrices are the inner loop of every response-fiber and
supercell-Jacobian assembly (one (n x n) matrix per fiber pair), so this
is the kernel the compiled extension exists for. Run:

    python benchmarks/bench_kernels.py [--sizes 41,128,512,1312]
"""

import argparse
import time

import numpy as np

from debye_forge.kernels import _fallback

try:
    from debye_forge.kernels import _ddcore
except ImportError:
    _ddcore = None


def bench(fn, a, b, T, mu, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(a, b, T, mu)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="41,128,512,1312")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(0)
    T, mu = 0.025, -0.24
    print(f"{'kernel':>12} {'n':>6} {'numpy [ms]':>12} {'cython [ms]':>12} {'speedup':>9}")
    for n in sizes:
        a = np.sort(rng.uniform(-2, 400, n))
        b = np.sort(rng.uniform(-2, 400, n))
        for name in ("dd1_matrix", "dd2_matrix", "dd3_matrix"):
            t_py = bench(getattr(_fallback, name), a, b, T, mu, args.repeats)
            if _ddcore is None:
                print(f"{name:>12} {n:>6} {1e3 * t_py:>12.3f} {'n/a':>12} {'n/a':>9}")
                continue
            t_cy = bench(getattr(_ddcore, name), a, b, T, mu, args.repeats)
            ref = _fallback.dd1_matrix(a, b, T, mu) if name == "dd1_matrix" else None
            if ref is not None:
                got = _ddcore.dd1_matrix(a, b, T, mu)
                err = np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300)
                assert err < 1e-13, f"backend mismatch {err:.2e}"
            print(
                f"{name:>12} {n:>6} {1e3 * t_py:>12.3f} {1e3 * t_cy:>12.3f} "
                f"{t_py / t_cy:>8.2f}x"
            )


if __name__ == "__main__":
    main()
