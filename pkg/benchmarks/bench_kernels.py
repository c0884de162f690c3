"""Benchmark the compiled kernels against the pure-Python fallbacks.

Run after installing the package:

    python benchmarks/bench_kernels.py

The two hot loops (Gibbs sweeps and cyclic coordinate descent) are timed
through the public entry points that use them, once with the compiled
extension and once with the fallback forced via DIFFNET_DISABLE_EXT.
"""

import time

import numpy as np

from diffnet import _kernels
from diffnet.ising import IsingModel, gibbs_sample, make_pair
from diffnet.solvers import omega_lasso


def time_gibbs(kernel, m=25, n=300, burnin=500, thinning=50, repeat=3):
    pair = make_pair("chain1", m, seed=0)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        _gibbs_with_kernel(kernel, pair.gamma_y, n, burnin, thinning)
        best = min(best, time.perf_counter() - t0)
    return best


def _gibbs_with_kernel(kernel, model, n, burnin, thinning):
    # mirror of ising.gibbs_sample with an explicit kernel argument
    thin = max(thinning, 1)
    W = model.coupling_matrix()
    rng = np.random.default_rng(123)
    x = np.ones(model.m, dtype=np.int8)
    out = np.empty((n, model.m), dtype=np.int8)
    total = burnin + n * thin
    done = 0
    while done < total:
        block = min(4096, total - done)
        U = rng.random((block, model.m))
        keep = np.full(block, -1, dtype=np.int64)
        for s in range(block):
            t = done + s + 1
            if t > burnin and (t - burnin) % thin == 0:
                keep[s] = (t - burnin) // thin - 1
        kernel(W, x, U, out, keep)
        done += block
    return out


def time_cd(kernel, p=105, repeat=5):
    rng = np.random.default_rng(7)
    A = rng.standard_normal((2 * p, p))
    H = np.ascontiguousarray(A.T @ A / (2 * p))
    best = float("inf")
    for _ in range(repeat):
        omega = np.zeros(p)
        grad = -np.eye(p)[3].copy()
        t0 = time.perf_counter()
        kernel(H, omega, grad, 0.05, 10_000, 1e-9)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    if not _kernels.USING_EXTENSION:
        print("compiled extension not available; timing fallback only")
    rows = []
    gib_py = time_gibbs(_kernels.py_gibbs_sweeps)
    cd_py = time_cd(_kernels.py_cd_quadratic_lasso)
    if _kernels.USING_EXTENSION:
        gib_c = time_gibbs(_kernels.gibbs_sweeps)
        cd_c = time_cd(_kernels.cd_quadratic_lasso)
        rows.append(("gibbs m=25 n=300 thin=50", gib_c, gib_py))
        rows.append(("cd lasso p=105", cd_c, cd_py))
        print(f"{'kernel':<28}{'compiled':>12}{'python':>12}{'speedup':>10}")
        for name, c, py in rows:
            print(f"{name:<28}{c * 1e3:>10.1f}ms{py * 1e3:>10.1f}ms{py / c:>9.1f}x")
    else:
        print(f"gibbs (python): {gib_py * 1e3:.1f}ms   cd (python): {cd_py * 1e3:.1f}ms")


if __name__ == "__main__":
    main()
