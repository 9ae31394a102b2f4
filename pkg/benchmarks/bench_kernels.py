"""Benchmark the RK4 trajectory kernel: numba backend vs pure-numpy fallback.

Run:

    python benchmarks/bench_kernels.py [--steps 100000] [--dims 100 300]

The same benchmark runs through both code paths regardless of the
KERRLAB_NO_NUMBA flag, so the speedup of the jitted kernels is measured
directly.  The first numba call includes JIT compilation and is excluded
via a warmup pass.
"""

import argparse
import time

import numpy as np

from kerrlab import _kernels as K


def coherent_like(dim: int, center: float) -> np.ndarray:
    n = np.arange(dim)
    amp = np.exp(-0.25 * (n - center) ** 2 / max(4.0, 0.25 * center))
    return amp / np.linalg.norm(amp)


def bench(block_fn, dim: int, steps: int, dt: float, F: float) -> float:
    dr, di, sq = K.model_coefficients(0.008, 0.05, dim - 1)
    u = coherent_like(dim, 0.15 * dim)
    v = np.zeros(dim)
    work = K.make_work(dim)
    up, vp = np.empty(dim), np.empty(dim)
    block_fn(u, v, up, vp, dr, di, sq, F, dt, min(200, steps), -1.0, work)  # warmup
    u = coherent_like(dim, 0.15 * dim)
    v = np.zeros(dim)
    t0 = time.perf_counter()
    block_fn(u, v, up, vp, dr, di, sq, F, dt, steps, -1.0, work)
    return (time.perf_counter() - t0) / steps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--dims", type=int, nargs="+", default=[101, 301])
    args = ap.parse_args()

    print(f"numba available: {K.NUMBA_ENABLED}")
    print(f"{'dim':>6} {'backend':>8} {'us/step':>10} {'speedup':>8}")
    for dim in args.dims:
        dt = 2.0 * np.pi / (10.0 * (0.008 * (dim - 1) ** 2 + 0.05 * (dim - 1) + 4.0))
        t_np = bench(K.rk4_block_numpy, dim, max(2000, args.steps // 50), dt, 4.0)
        print(f"{dim:>6} {'numpy':>8} {1e6 * t_np:>10.3f} {'1.0x':>8}")
        if K.NUMBA_ENABLED:
            t_nb = bench(K.rk4_block_numba, dim, args.steps, dt, 4.0)
            print(f"{dim:>6} {'numba':>8} {1e6 * t_nb:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
