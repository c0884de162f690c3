# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Gibbs sweeps and cyclic coordinate descent.

Both loops are strictly sequential (each update feeds the next), so they
cannot be vectorized with numpy; this module provides the C versions.
``diffnet._kernels`` falls back to numpy implementations of the same
contracts when the extension is unavailable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, tanh

cnp.import_array()


def gibbs_sweeps(double[:, ::1] W, cnp.int8_t[::1] x, double[:, ::1] U,
                 cnp.int8_t[:, ::1] out, long[::1] keep_row):
    """Run one block of systematic-scan sweeps over the state x (in place).

    W         : (m, m) symmetric coupling matrix, zero diagonal.
    U         : (n_sweeps, m) uniform variates, one per site update.
    keep_row  : per sweep, the row of `out` that receives the post-sweep
                state, or -1 to discard.
    """
    cdef Py_ssize_t m = W.shape[0]
    cdef Py_ssize_t n_sweeps = U.shape[0]
    cdef Py_ssize_t s, v, u, r
    cdef double fld, p_plus
    for s in range(n_sweeps):
        for v in range(m):
            fld = 0.0
            for u in range(m):
                fld += W[v, u] * x[u]
            p_plus = 0.5 * (1.0 + tanh(fld))
            x[v] = 1 if U[s, v] < p_plus else -1
        r = keep_row[s]
        if r >= 0:
            for v in range(m):
                out[r, v] = x[v]


def cd_quadratic_lasso(double[:, ::1] H, double[::1] omega, double[::1] grad,
                       double lam, Py_ssize_t max_sweeps, double tol):
    """Cyclic coordinate descent for 0.5 w'Hw - w_k + lam ||w||_1.

    ``grad`` must hold H @ omega - e_k on entry and is maintained in place.
    Returns (sweeps run, last max coordinate change).
    """
    cdef Py_ssize_t p = H.shape[0]
    cdef Py_ssize_t sweep, j, i
    cdef double delta_max, hjj, old, target, new, delta
    for sweep in range(max_sweeps):
        delta_max = 0.0
        for j in range(p):
            hjj = H[j, j]
            old = omega[j]
            if hjj <= 0.0:
                new = 0.0
            else:
                target = old - grad[j] / hjj
                new = fabs(target) - lam / hjj
                if new <= 0.0:
                    new = 0.0
                elif target < 0.0:
                    new = -new
            delta = new - old
            if delta != 0.0:
                omega[j] = new
                for i in range(p):
                    grad[i] += delta * H[i, j]
            if fabs(delta) > delta_max:
                delta_max = fabs(delta)
        if delta_max <= tol:
            return sweep + 1, delta_max
    return max_sweeps, delta_max
