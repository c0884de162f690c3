"""Kernel dispatch: compiled extension if available, numpy fallback if not.

Set ``DIFFNET_DISABLE_EXT=1`` before import to force the fallback (used by
the benchmark and the parity tests).  ``USING_EXTENSION`` records which
implementation is live.
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "USING_EXTENSION",
    "gibbs_sweeps",
    "cd_quadratic_lasso",
    "py_gibbs_sweeps",
    "py_cd_quadratic_lasso",
]

_core = None
if os.environ.get("DIFFNET_DISABLE_EXT", "") != "1":
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        _core = None

USING_EXTENSION = _core is not None


def py_gibbs_sweeps(W, x, U, out, keep_row):
    """Pure-Python version of the Gibbs sweep block (see _core.pyx).

    Site fields use np.dot while the flip threshold uses math.tanh, the
    same libm call as the compiled kernel, so both paths draw identical
    trajectories from identical uniforms.
    """
    m = W.shape[0]
    for s in range(U.shape[0]):
        row = U[s]
        for v in range(m):
            fld = float(np.dot(W[v], x))
            p_plus = 0.5 * (1.0 + math.tanh(fld))
            x[v] = 1 if row[v] < p_plus else -1
        r = keep_row[s]
        if r >= 0:
            out[r, :] = x


def py_cd_quadratic_lasso(H, omega, grad, lam, max_sweeps, tol):
    """Numpy version of the coordinate-descent kernel (see _core.pyx)."""
    p = H.shape[0]
    delta_max = 0.0
    for sweep in range(max_sweeps):
        delta_max = 0.0
        for j in range(p):
            hjj = H[j, j]
            old = omega[j]
            if hjj <= 0.0:
                new = 0.0
            else:
                target = old - grad[j] / hjj
                new = abs(target) - lam / hjj
                if new <= 0.0:
                    new = 0.0
                elif target < 0.0:
                    new = -new
            delta = new - old
            if delta != 0.0:
                omega[j] = new
                grad += delta * H[:, j]
            if abs(delta) > delta_max:
                delta_max = abs(delta)
        if delta_max <= tol:
            return sweep + 1, delta_max
    return max_sweeps, delta_max


if USING_EXTENSION:
    gibbs_sweeps = _core.gibbs_sweeps
    cd_quadratic_lasso = _core.cd_quadratic_lasso
else:
    gibbs_sweeps = py_gibbs_sweeps
    cd_quadratic_lasso = py_cd_quadratic_lasso
