"""Bootstrap sketching for max-type simultaneous inference.

Both procedures estimate upper quantiles of

    T = max_k sqrt(n) |theta_hat_k - theta_k|      (raw)
    W = max_k sqrt(n) |theta_hat_k - theta_k| / sigma_hat_k   (studentized)

without re-estimating the inverse-Hessian rows per replicate.  The
multiplier sketch perturbs the linearization of the estimator with i.i.d.
standard-normal weights; the empirical sketch resamples rows (with
replacement, per sample) and re-runs only the penalized first step, adding
the mandatory correction term that recentres replicates at the reference
vector.  Replicate b always derives its generator from child b of one
root seed sequence, so serial and parallel execution agree bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kliep import KliepProblem, gradient, ratio_state
from .solvers import DEFAULT_OPTIONS, sparse_kliep

__all__ = [
    "BootstrapSketch",
    "GlobalTestResult",
    "quantile",
    "multiplier_sketch",
    "empirical_sketch",
    "simultaneous_ci",
    "global_test",
]


@dataclass(frozen=True)
class BootstrapSketch:
    """Replicate max statistics plus the exact order-statistic extractor."""

    stats: np.ndarray
    kind: str  # "T" or "W"
    method: str  # "empirical" or "multiplier"
    seed: int
    n: int  # pooled sample size behind the sqrt(n) scaling
    n_excluded: int = 0
    unreliable: bool = False

    @property
    def n_b(self):
        return self.stats.shape[0]


@dataclass(frozen=True)
class GlobalTestResult:
    statistic: float
    critical: float
    alpha: float
    kind: str
    reject: bool


def quantile(sketch, alpha):
    """The floor((1-alpha)*n_b)-th order statistic, 1-based, ascending.

    No interpolation; an index of zero (alpha too close to 1 for the
    sketch size) is an error.  A tiny epsilon guards the floor against
    binary representation of decimal alphas.
    """
    stats = sketch.stats if hasattr(sketch, "stats") else np.asarray(sketch)
    n_b = stats.shape[0]
    idx = math.floor((1.0 - alpha) * n_b + 1e-9)
    if idx < 1:
        raise ValueError(f"order statistic index 0 for alpha={alpha}, n_b={n_b}")
    idx = min(idx, n_b)
    return float(np.sort(stats)[idx - 1])


def _centered_rows(problem, theta_ref):
    """Centered x rows and ratio-weighted centered y rows at theta_ref."""
    st = ratio_state(np.asarray(theta_ref, dtype=np.float64), problem.psi_y)
    A = problem.psi_x - problem.psi_x.mean(axis=0)
    B = problem.psi_y * st.rhat[:, None] - st.muhat
    return A, B


def multiplier_sketch(problem, Omega, theta_ref, sigma=None, n_b=300, seed=0,
                      kind="T"):
    """Gaussian-multiplier sketch of the max statistic.

    Per replicate, the centered per-observation contributions are weighted
    by fresh N(0,1) draws (x multipliers first, then y) and contracted
    with each inverse-Hessian row.  ``sigma`` is required for kind "W".
    """
    if kind not in ("T", "W"):
        raise ValueError(f"kind must be 'T' or 'W', got {kind!r}")
    Omega = np.asarray(Omega, dtype=np.float64)
    if Omega.ndim != 2 or Omega.shape[0] != problem.p:
        raise ValueError("Omega must have one row per edge statistic")
    if kind == "W":
        if sigma is None:
            raise ValueError("kind 'W' needs the sigma vector")
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.shape != (Omega.shape[1],):
            raise ValueError("sigma must have one entry per Omega column")
    A, B = _centered_rows(problem, theta_ref)
    Cx = A @ Omega  # (n_x, q)
    Cy = B @ Omega  # (n_y, q)
    n, n_x, n_y = problem.n, problem.n_x, problem.n_y
    root = np.random.SeedSequence(seed)
    stats = np.empty(n_b)
    for b, child in enumerate(root.spawn(n_b)):
        rng = np.random.default_rng(child)
        xi_x = rng.standard_normal(n_x)
        xi_y = rng.standard_normal(n_y)
        v = (n / n_x) * (xi_x @ Cx) - (n / n_y) * (xi_y @ Cy)
        if kind == "W":
            v = v / sigma
        stats[b] = np.max(np.abs(v)) / math.sqrt(n)
    return BootstrapSketch(
        stats=stats, kind=kind, method="multiplier", seed=seed, n=n
    )


def _empirical_replicate(problem, lambda_theta, Omega, center, correction,
                         idx_x, idx_y, sigma, kind, opts, warm):
    """One empirical-sketch replicate given explicit resample indices.

    ``correction`` is Omega' grad at the reference vector on the original
    data; adding it back cancels the conditional mean of the replicate
    score, so the replicate deviations are centered at the reference
    vector (without it the deviation would pile the observed deviation on
    top of the bootstrap noise).  Returns (stat, converged).
    """
    sub = KliepProblem(problem.psi_x[idx_x], problem.psi_y[idx_y])
    sol = sparse_kliep(sub, lambda_theta, opts, theta0=warm)
    g_b = gradient(sol.values, sub)
    theta_b = sol.values - Omega @ g_b + correction
    dev = math.sqrt(problem.n) * np.abs(theta_b - center)
    if kind == "W":
        dev = dev / sigma
    return float(dev.max()), sol.converged


def empirical_sketch(problem, lambda_theta, Omega, theta_ref, sigma=None,
                     n_b=300, seed=0, kind="T", opts=DEFAULT_OPTIONS,
                     theta_check=None):
    """Empirical-bootstrap sketch of the max statistic.

    Rows of each sample are resampled with replacement (x indices drawn
    before y).  Step 1 is re-solved per replicate at the original penalty,
    warm-started from ``theta_check`` when given; the inverse-Hessian rows
    are never re-estimated.  Replicates whose step-1 solve fails to
    converge are excluded; losing more than 5% of them flags the sketch
    unreliable.
    """
    if kind not in ("T", "W"):
        raise ValueError(f"kind must be 'T' or 'W', got {kind!r}")
    Omega = np.asarray(Omega, dtype=np.float64)
    theta_ref = np.asarray(theta_ref, dtype=np.float64)
    if Omega.ndim != 2 or Omega.shape[0] != problem.p:
        raise ValueError("Omega must have one row per edge statistic")
    if Omega.shape[1] != problem.p:
        raise ValueError("empirical sketch needs one Omega column per edge")
    if kind == "W":
        if sigma is None:
            raise ValueError("kind 'W' needs the sigma vector")
        sigma = np.asarray(sigma, dtype=np.float64)
    OmegaT = Omega.T
    correction = OmegaT @ gradient(theta_ref, problem)
    root = np.random.SeedSequence(seed)
    stats = []
    excluded = 0
    for child in root.spawn(n_b):
        rng = np.random.default_rng(child)
        idx_x = rng.integers(0, problem.n_x, problem.n_x)
        idx_y = rng.integers(0, problem.n_y, problem.n_y)
        stat, ok = _empirical_replicate(
            problem, lambda_theta, OmegaT, theta_ref, correction,
            idx_x, idx_y, sigma, kind, opts, theta_check,
        )
        if ok:
            stats.append(stat)
        else:
            excluded += 1
    return BootstrapSketch(
        stats=np.asarray(stats),
        kind=kind,
        method="empirical",
        seed=seed,
        n=problem.n,
        n_excluded=excluded,
        unreliable=excluded > 0.05 * n_b,
    )


def simultaneous_ci(theta_hat, sketch, alpha, sigma=None):
    """Simultaneous intervals theta_hat_k +- c_alpha (sigma_k) / sqrt(n).

    The unstudentized kind gives equal widths; the studentized kind needs
    the same sigma vector the sketch used.
    """
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    c = quantile(sketch, alpha)
    if sketch.kind == "W":
        if sigma is None:
            raise ValueError("kind 'W' intervals need the sigma vector")
        half = c * np.asarray(sigma, dtype=np.float64)
    else:
        half = np.full(theta_hat.shape, c)
    half = half / math.sqrt(sketch.n)
    return np.column_stack([theta_hat - half, theta_hat + half])


def global_test(problem, theta0, Omega, theta_hat, sigma=None, alpha=0.05,
                kind="T", method="empirical", lambda_theta=None, n_b=300,
                seed=0, opts=DEFAULT_OPTIONS, theta_check=None):
    """Equal-graph test: reject when the observed max deviation exceeds
    the sketched quantile (strict inequality).

    The sketch is computed with the hypothesized vector in place of the
    estimate; the observed statistic uses the actual estimate against the
    hypothesized value.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    dev = math.sqrt(problem.n) * np.abs(theta_hat - theta0)
    if kind == "W":
        if sigma is None:
            raise ValueError("kind 'W' needs the sigma vector")
        dev = dev / np.asarray(sigma, dtype=np.float64)
    statistic = float(dev.max())
    if method == "empirical":
        if lambda_theta is None:
            raise ValueError("empirical sketch needs lambda_theta")
        sketch = empirical_sketch(
            problem, lambda_theta, Omega, theta0, sigma=sigma, n_b=n_b,
            seed=seed, kind=kind, opts=opts, theta_check=theta_check,
        )
    elif method == "multiplier":
        sketch = multiplier_sketch(
            problem, Omega, theta0, sigma=sigma, n_b=n_b, seed=seed, kind=kind
        )
    else:
        raise ValueError(f"unknown sketch method {method!r}")
    critical = quantile(sketch, alpha)
    return (
        GlobalTestResult(
            statistic=statistic,
            critical=critical,
            alpha=alpha,
            kind=kind,
            reject=statistic > critical,
        ),
        sketch,
    )
