"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Times the five-point stencil, Gram-Schmidt with image replay, and a full
LOCG(1,1,1) solve on the 50 x 50 Laplacian under each backend.  Compilation
happens in a warm-up call and is reported separately.
"""

import argparse
import time
import timeit

import numpy as np

from locg import SolverConfig, laplacian2d, locg_solve, start_block
from locg import _kernels


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench(repeat):
    rng = np.random.default_rng(0)
    N = 50
    U = rng.standard_normal((N * N, 4))
    B = rng.standard_normal((N * N, 12))
    AB = rng.standard_normal((N * N, 12))
    Q0 = np.linalg.qr(rng.standard_normal((N * N, 2)))[0]
    AQ0 = rng.standard_normal((N * N, 2))
    A, _ = laplacian2d(N)
    X0 = start_block(A.n, 1, 0)

    rows = []
    for backend in ("numba", "numpy"):
        if backend == "numba" and _kernels.stencil5_numba is None:
            continue
        _kernels.USE_NUMBA = backend == "numba"
        t0 = time.perf_counter()
        _kernels.stencil5(U, N)
        _kernels.mgs(B, AB, Q0, AQ0)
        warm = time.perf_counter() - t0
        st = best_of(lambda: _kernels.stencil5(U, N), repeat)
        mg = best_of(lambda: _kernels.mgs(B, AB, Q0, AQ0), repeat)
        sv = best_of(lambda: locg_solve(A, None, X0, SolverConfig(1, 1, 1, max_iter=3000,
                                                                  diagnostics=False)),
                     max(1, repeat // 10))
        rows.append((backend, warm, st, mg, sv))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rows = bench(args.repeat)
    print(f"{'backend':8s} {'warm-up s':>10s} {'stencil ms':>11s} {'mgs ms':>9s} {'solve s':>9s}")
    for b, w, st, mg, sv in rows:
        print(f"{b:8s} {w:10.3f} {st * 1e3:11.3f} {mg * 1e3:9.3f} {sv:9.3f}")
    if len(rows) == 2:
        print(f"numba speed-up: stencil x{rows[1][2] / rows[0][2]:.1f}, "
              f"mgs x{rows[1][3] / rows[0][3]:.1f}, solve x{rows[1][4] / rows[0][4]:.1f}")


if __name__ == "__main__":
    main()
