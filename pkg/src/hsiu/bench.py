"""Timing comparison between the JIT-compiled kernels and the pure-Python path.

Run as ``python -m hsiu.bench`` (or ``hsiu bench``). The fallback path is the
same kernel source executed uncompiled, which is exactly what runs when
``HSIU_NUMBA=0``.
"""

import time

import numpy as np

from . import kernels
from ._accel import NUMBA_ENABLED, py_func


def _time(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_label_sweeps(size, iters, rng):
    n_classes = 4
    n = size * size
    loglik = rng.standard_normal((n_classes, n))
    u = rng.random((iters, n))
    args = lambda: (rng.integers(0, n_classes, n).astype(np.int64), size, size,
                    1.2, True, loglik, u, np.empty((0, 0), dtype=np.int64))
    compiled = kernels.gibbs_label_sweeps
    fallback = py_func(compiled)
    compiled(*args())  # JIT warm-up
    return _time(compiled, *args()), _time(fallback, *args(), repeats=1)


def bench_simplex_block(size, iters, rng):
    n = size * size
    d = 2
    C = np.full((d, n), 0.25)
    cbar = rng.uniform(0.2, 0.4, size=(d, n))
    lam = np.ascontiguousarray(np.tile(np.eye(d) * 50.0, (1, 1, 1)))
    z = np.zeros(n, dtype=np.int64)
    u = rng.random((n, iters, d))
    compiled = kernels.simplex_gibbs_block
    fallback = py_func(compiled)
    compiled(C.copy(), cbar, lam, z, u)  # JIT warm-up
    return _time(compiled, C.copy(), cbar, lam, z, u), \
        _time(fallback, C.copy(), cbar, lam, z, u, repeats=1)


def run_benchmarks(size=40, iters=20):
    rng = np.random.default_rng(1)
    print(f"numba enabled: {NUMBA_ENABLED}")
    print(f"workload: {size}x{size} grid, {iters} sweeps\n")
    for name, fn in [("label gibbs sweeps", bench_label_sweeps),
                     ("simplex gibbs block", bench_simplex_block)]:
        fast, slow = fn(size, iters, rng)
        ratio = slow / fast if fast > 0 else float("inf")
        print(f"{name:22s} compiled {fast * 1e3:9.2f} ms   "
              f"python {slow * 1e3:9.2f} ms   speedup {ratio:7.1f}x")


if __name__ == "__main__":
    run_benchmarks()
