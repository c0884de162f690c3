"""Convex solvers behind the three-step debiasing pipeline.

Three problems recur:

* l1-penalized ratio loss (step 1): accelerated proximal gradient with
  backtracking and adaptive restart.  The gradient is one pass over the
  data, which makes prox-gradient a better fit than coordinate descent
  through the shared log-partition term.
* l1-penalized quadratic rows of an approximate inverse Hessian (step 2):
  cyclic coordinate descent with closed-form soft-threshold updates, plus
  a scaled variant that calibrates its own penalty level.
* support-restricted refits of the smooth loss (baselines and step-3
  variants): damped Newton with backtracking.

Every returned solution carries its max KKT violation; nothing is hidden
behind a convergence flag.  The coordinate order is fixed (cyclic) so
results are bit-reproducible.  Solvers are single-threaded per call and
never mutate their inputs, so distinct calls (e.g. the p inverse-row
solves against one shared Hessian) can run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kliep import gradient, hessian, loss, ratio_state

__all__ = [
    "SolverOptions",
    "SparseSolution",
    "RefitResult",
    "sparse_kliep",
    "refit_support",
    "omega_lasso",
    "omega_scaled_lasso",
    "refit_omega",
]


@dataclass(frozen=True)
class SolverOptions:
    """Shared solver knobs; defaults suit the simulation scales.

    tol is relative on objective decrease; tol_kkt is the absolute target
    for the reported max KKT violation.
    """

    max_iter: int = 10_000
    tol: float = 1e-7
    tol_kkt: float = 1e-6
    step_init: float = 1.0
    step_shrink: float = 0.5
    step_grow: float = 1.1
    tol_newton: float = 1e-10
    max_scale_iter: int = 200
    tol_scale: float = 1e-8

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if min(self.tol, self.tol_kkt, self.tol_newton, self.tol_scale) <= 0:
            raise ValueError("tolerances must be > 0")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class SparseSolution:
    values: np.ndarray
    support: np.ndarray
    lam: float
    iterations: int
    converged: bool
    kkt_residual: float
    objective: float
    sigma_hat: float | None = None  # scaled-lasso scale, when applicable


@dataclass(frozen=True)
class RefitResult:
    theta: np.ndarray
    converged: bool
    grad_norm: float
    iterations: int = 0
    ill_posed: bool = False
    damped: bool = False


def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _l1_kkt_residual(grad, values, lam):
    """Max violation of the subgradient conditions of f + lam*||.||_1."""
    on = values != 0.0
    res = 0.0
    if np.any(~on):
        res = max(res, float(np.max(np.abs(grad[~on])) - lam))
    if np.any(on):
        res = max(res, float(np.max(np.abs(grad[on] + lam * np.sign(values[on])))))
    return max(res, 0.0)


def sparse_kliep(problem, lambda_theta, opts=DEFAULT_OPTIONS, theta0=None,
                 trace=None):
    """l1-penalized ratio-loss minimizer (FISTA with restart).

    Non-convergence within ``opts.max_iter`` is reported through
    ``converged=False``, never raised.  lambda_theta = 0 is rejected when
    p >= n_y because the smooth loss is then no longer strictly convex;
    use :func:`refit_support` on an explicit support instead.  Passing a
    list as ``trace`` records the objective at every accepted iterate
    (a monotone sequence; restarts absorb momentum overshoots).
    """
    if lambda_theta < 0:
        raise ValueError("lambda_theta must be >= 0")
    if lambda_theta == 0 and problem.p >= problem.n_y:
        raise ValueError(
            "lambda_theta=0 with p >= n_y is ill-posed; refit on an explicit "
            "support via refit_support instead"
        )
    lam = float(lambda_theta)
    p = problem.p
    theta = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()

    def f_and_g(t):
        state = ratio_state(t, problem.psi_y, problem.weights_y)
        return loss(t, problem, state), gradient(t, problem, state)

    step = opts.step_init

    def prox_step(point, f_point, g_point):
        nonlocal step
        while True:
            cand = _soft_threshold(point - step * g_point, step * lam)
            d = cand - point
            f_cand = loss(cand, problem)
            if f_cand <= f_point + g_point @ d + 0.5 * (d @ d) / step + 1e-12:
                return cand, f_cand
            step *= opts.step_shrink
            if step < 1e-18:
                return cand, f_cand

    obj = loss(theta, problem) + lam * np.abs(theta).sum()
    if theta0 is not None:
        # warm starts that already certify are returned untouched
        kkt0 = _l1_kkt_residual(gradient(theta, problem), theta, lam)
        if kkt0 <= opts.tol_kkt:
            return SparseSolution(
                values=theta,
                support=np.flatnonzero(theta),
                lam=lam,
                iterations=0,
                converged=True,
                kkt_residual=kkt0,
                objective=obj,
            )
    momentum = theta.copy()
    t_acc = 1.0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        f_mom, g_mom = f_and_g(momentum)
        cand, f_cand = prox_step(momentum, f_mom, g_mom)
        obj_cand = f_cand + lam * np.abs(cand).sum()
        if obj_cand > obj:
            # momentum overshot: restart from the current iterate, where a
            # backtracked prox step cannot increase the objective
            t_acc = 1.0
            f_cur, g_cur = f_and_g(theta)
            cand, f_cand = prox_step(theta, f_cur, g_cur)
            obj_cand = f_cand + lam * np.abs(cand).sum()
            if obj_cand > obj:  # numerically stalled
                break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        momentum = cand + ((t_acc - 1.0) / t_next) * (cand - theta)
        t_acc = t_next
        theta_prev, theta = theta, cand
        rel_drop = (obj - obj_cand) / max(1.0, abs(obj))
        obj = obj_cand
        if trace is not None:
            trace.append(obj)
        step *= opts.step_grow
        if np.max(np.abs(theta)) > 30.0:
            # separation between the samples: the penalized objective is
            # unbounded below at this lambda and no minimizer exists
            break
        if rel_drop < opts.tol and np.max(np.abs(theta - theta_prev)) < np.sqrt(opts.tol):
            if _l1_kkt_residual(gradient(theta, problem), theta, lam) <= opts.tol_kkt:
                converged = True
                break
    kkt = _l1_kkt_residual(gradient(theta, problem), theta, lam)
    return SparseSolution(
        values=theta,
        support=np.flatnonzero(theta),
        lam=lam,
        iterations=it,
        converged=(converged or kkt <= opts.tol_kkt) and kkt <= 10 * opts.tol_kkt,
        kkt_residual=kkt,
        objective=obj,
    )


def refit_support(problem, support, opts=DEFAULT_OPTIONS):
    """Unpenalized minimizer of the loss restricted to ``support``.

    Damped Newton with backtracking on the restricted coordinates;
    off-support coordinates are exactly zero.  A singular restricted
    Hessian is ridge-damped and flagged; a support of size >= n_y is
    flagged ill-posed.  When the two samples separate along a restricted
    direction the empirical loss is unbounded below; iterates escaping
    a large box are truncated and flagged not converged / ill-posed.
    """
    support = np.asarray(sorted(set(int(s) for s in support)), dtype=np.int64)
    p = problem.p
    if support.size and (support.min() < 0 or support.max() >= p):
        raise ValueError("support indices out of range")
    theta = np.zeros(p)
    if support.size == 0:
        return RefitResult(theta=theta, converged=True, grad_norm=0.0)
    ill_posed = support.size >= problem.n_y
    damped = False
    g = gradient(theta, problem)
    grad_norm = float(np.max(np.abs(g[support])))
    it = 0
    for it in range(1, 200):
        if grad_norm <= opts.tol_newton:
            break
        state = ratio_state(theta, problem.psi_y, problem.weights_y)
        H = hessian(theta, problem.psi_y, problem.weights_y, state)
        Hss = H[np.ix_(support, support)]
        gs = g[support]
        try:
            direction = np.linalg.solve(Hss, gs)
        except np.linalg.LinAlgError:
            direction = None
        if direction is None or not np.all(np.isfinite(direction)):
            ridge = 1e-8 * max(np.trace(Hss) / support.size, 1.0)
            direction = np.linalg.solve(Hss + ridge * np.eye(support.size), gs)
            damped = True
        f0 = loss(theta, problem, state)
        slope = gs @ direction
        t = 1.0
        while t > 1e-14:
            cand = theta.copy()
            cand[support] -= t * direction
            if loss(cand, problem) <= f0 - 1e-4 * t * slope:
                break
            t *= 0.5
        theta = cand
        if np.max(np.abs(theta)) > 30.0:  # separation: loss unbounded below
            ill_posed = True
            break
        g = gradient(theta, problem)
        grad_norm = float(np.max(np.abs(g[support])))
    return RefitResult(
        theta=theta,
        converged=grad_norm <= max(opts.tol_newton, 1e-8) and not ill_posed,
        grad_norm=grad_norm,
        iterations=it,
        ill_posed=ill_posed,
        damped=damped,
    )


def _omega_objective(H, k, lam, omega):
    return float(0.5 * omega @ (H @ omega) - omega[k] + lam * np.abs(omega).sum())


def omega_lasso(H, k, lambda_k, opts=DEFAULT_OPTIONS, omega0=None):
    """l1-penalized quadratic: 0.5 w'Hw - w_k + lambda_k ||w||_1.

    Cyclic coordinate descent (fixed order, closed-form updates).  H must
    be symmetric; k is a 0-based column index.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    p = H.shape[0]
    if H.shape != (p, p) or not np.allclose(H, H.T, atol=1e-8):
        raise ValueError("H must be square and symmetric")
    if not 0 <= k < p:
        raise ValueError(f"column index {k} out of range")
    if lambda_k <= 0:
        raise ValueError("lambda_k must be > 0")
    lam = float(lambda_k)
    omega = np.zeros(p) if omega0 is None else np.asarray(omega0, dtype=np.float64).copy()
    grad = H @ omega
    grad[k] -= 1.0
    cd_tol = min(opts.tol, opts.tol_kkt * 1e-2)
    sweeps, _ = _kernels.cd_quadratic_lasso(H, omega, grad, lam, opts.max_iter, cd_tol)
    kkt = _l1_kkt_residual(grad, omega, lam)
    return SparseSolution(
        values=omega,
        support=np.flatnonzero(omega),
        lam=lam,
        iterations=int(sweeps),
        converged=sweeps < opts.max_iter and kkt <= 10 * opts.tol_kkt,
        kkt_residual=kkt,
        objective=_omega_objective(H, k, lam, omega),
    )


def omega_scaled_lasso(H, k, lambda0, opts=DEFAULT_OPTIONS):
    """Inverse-Hessian row by scaled lasso at a universal penalty level.

    Runs the scaled-lasso regression of coordinate k on the others in the
    quadratic metric H: alternate (i) a lasso for the regression vector
    beta at penalty lambda0 * sigma and (ii) the residual-variance update
    sigma^2 <- H_kk - 2 beta' H_{-k,k} + beta' H_{-k,-k} beta (clipped
    below at 1e-12), then map back through

        omega_k = 1 / sigma^2,    omega_{-k} = -beta / sigma^2.

    The residual form is nonnegative for PSD H, so the working penalty
    cannot collapse; at lambda0 -> 0 with invertible H the output is the
    exact k-th inverse column.  Oscillation past ``opts.max_scale_iter``
    reports converged=False.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    p = H.shape[0]
    if H.shape != (p, p) or not np.allclose(H, H.T, atol=1e-8):
        raise ValueError("H must be square and symmetric")
    if not 0 <= k < p:
        raise ValueError(f"column index {k} out of range")
    if lambda0 <= 0:
        raise ValueError("lambda0 must be > 0")
    others = np.ascontiguousarray(np.delete(np.arange(p), k))
    A = np.ascontiguousarray(H[np.ix_(others, others)])
    b = H[others, k]
    beta = np.zeros(p - 1)
    sigma = float(np.sqrt(max(H[k, k], 1e-12)))
    cd_tol = min(opts.tol, opts.tol_kkt * 1e-2)
    converged = False
    sweeps_total = 0
    lam_solved = lambda0 * sigma
    grad = -b.copy()
    for _ in range(opts.max_scale_iter):
        lam_solved = lambda0 * sigma
        grad = A @ beta - b
        sweeps, _ = _kernels.cd_quadratic_lasso(
            A, beta, grad, lam_solved, opts.max_iter, cd_tol
        )
        sweeps_total += int(sweeps)
        s2 = H[k, k] - 2.0 * (beta @ b) + beta @ (A @ beta)
        sigma_new = float(np.sqrt(max(s2, 1e-12)))
        done = abs(sigma_new - sigma) <= opts.tol_scale * max(1.0, sigma)
        sigma = sigma_new
        if done:
            converged = True
            break
    omega = np.empty(p)
    omega[k] = 1.0 / sigma**2
    omega[others] = -beta / sigma**2
    # the certificate covers the regression problem actually solved
    kkt = _l1_kkt_residual(grad, beta, lam_solved)
    return SparseSolution(
        values=omega,
        support=np.flatnonzero(omega),
        lam=lam_solved,
        iterations=sweeps_total,
        converged=converged and kkt <= 10 * opts.tol_kkt,
        kkt_residual=kkt,
        objective=_omega_objective(H, k, lam_solved, omega),
        sigma_hat=sigma,
    )


def refit_omega(H, k, support, opts=DEFAULT_OPTIONS):
    """Solve H_SS w_S = (e_k)_S; zeros elsewhere; ridge-damped if singular.

    Returns (omega, damped_flag).
    """
    H = np.asarray(H, dtype=np.float64)
    p = H.shape[0]
    support = np.asarray(sorted(set(int(s) for s in support)), dtype=np.int64)
    omega = np.zeros(p)
    if support.size == 0:
        return omega, False
    if support.min() < 0 or support.max() >= p:
        raise ValueError("support indices out of range")
    Hss = H[np.ix_(support, support)]
    b = np.zeros(support.size)
    pos = np.searchsorted(support, k)
    if pos < support.size and support[pos] == k:
        b[pos] = 1.0
    damped = False
    try:
        sol = np.linalg.solve(Hss, b)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ridge = 1e-10 * max(np.trace(Hss) / support.size, 1.0)
        sol = np.linalg.solve(Hss + ridge * np.eye(support.size), b)
        damped = True
    omega[support] = sol
    return omega, damped
