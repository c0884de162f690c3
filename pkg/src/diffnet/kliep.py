"""Empirical density-ratio loss for direct difference estimation.

Given samples from two distributions of the same pairwise exponential
family, the loss

    L(theta) = -mean_x[ theta' psi(x) ] + log mean_y[ exp(theta' psi(y)) ]

is convex in theta and is minimized at the difference of the two natural
parameter vectors.  This module evaluates L, its gradient, and its Hessian
from the two statistic matrices alone.  All log-partition terms go through
a max-shifted log-sum-exp, so large inner products never overflow.

Conventions: all means use divisor n (biased), and the empirical ratio
weights r(y_j) = exp(theta' psi(y_j)) / Zhat average to exactly 1 over the
y-sample.  Everything here is a pure function of immutable inputs;
evaluations at different theta are safe to run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KliepProblem",
    "RatioState",
    "log_partition_hat",
    "ratio_state",
    "loss",
    "gradient",
    "hessian",
    "hessian_ustat",
]


@dataclass(frozen=True)
class KliepProblem:
    """A pair of statistic matrices sharing the same edge layout.

    ``weights_x`` / ``weights_y`` are optional probability vectors over the
    rows.  They default to uniform, which gives the ordinary empirical
    loss; population-level oracles pass the exact state distribution of an
    enumerable model instead.
    """

    psi_x: np.ndarray
    psi_y: np.ndarray
    weights_x: np.ndarray | None = None
    weights_y: np.ndarray | None = None

    def __post_init__(self):
        psi_x = np.ascontiguousarray(self.psi_x, dtype=np.float64)
        psi_y = np.ascontiguousarray(self.psi_y, dtype=np.float64)
        if psi_x.ndim != 2 or psi_y.ndim != 2:
            raise ValueError("statistic matrices must be 2-d")
        if psi_x.shape[1] != psi_y.shape[1]:
            raise ValueError(
                f"edge-count mismatch: {psi_x.shape[1]} vs {psi_y.shape[1]}"
            )
        if psi_x.shape[0] < 1 or psi_y.shape[0] < 2:
            raise ValueError("need n_x >= 1 and n_y >= 2")
        if not (np.all(np.isfinite(psi_x)) and np.all(np.isfinite(psi_y))):
            raise ValueError("statistic matrices must be finite")
        object.__setattr__(self, "psi_x", psi_x)
        object.__setattr__(self, "psi_y", psi_y)
        for name, n in (("weights_x", psi_x.shape[0]), ("weights_y", psi_y.shape[0])):
            w = getattr(self, name)
            if w is None:
                continue
            w = np.ascontiguousarray(w, dtype=np.float64)
            if w.shape != (n,) or np.any(w < 0):
                raise ValueError(f"{name} must be a nonnegative length-{n} vector")
            object.__setattr__(self, name, w / w.sum())

    @property
    def p(self):
        return self.psi_x.shape[1]

    @property
    def n_x(self):
        return self.psi_x.shape[0]

    @property
    def n_y(self):
        return self.psi_y.shape[0]

    @property
    def n(self):
        return self.n_x + self.n_y

    @property
    def mean_x(self):
        """Column means of psi_x (cached; the linear part of the loss)."""
        cached = getattr(self, "_mean_x", None)
        if cached is None:
            if self.weights_x is None:
                cached = self.psi_x.mean(axis=0)
            else:
                cached = self.weights_x @ self.psi_x
            object.__setattr__(self, "_mean_x", cached)
        return cached


@dataclass(frozen=True)
class RatioState:
    """Everything the loss derivatives need at a fixed theta.

    Attributes
    ----------
    log_zhat : log of the weighted mean of exp(theta' psi(y)).
    rhat     : per-row ratio weights; their weighted mean is 1.
    muhat    : ratio-weighted mean of the psi_y rows.
    """

    theta: np.ndarray
    log_zhat: float
    rhat: np.ndarray
    muhat: np.ndarray


def _log_weights(psi_y, weights):
    if weights is None:
        return -np.log(psi_y.shape[0])
    with np.errstate(divide="ignore"):
        return np.log(weights)


def log_partition_hat(theta, psi_y, weights=None):
    """log of (weighted) mean of exp(theta' psi(y)), max-shifted."""
    theta = np.asarray(theta, dtype=np.float64)
    psi_y = np.asarray(psi_y, dtype=np.float64)
    if theta.shape != (psi_y.shape[1],):
        raise ValueError(f"theta has length {theta.shape}, need ({psi_y.shape[1]},)")
    a = psi_y @ theta + _log_weights(psi_y, weights)
    amax = a.max()
    return float(amax + np.log(np.exp(a - amax).sum()))


def ratio_state(theta, psi_y, weights=None):
    """Ratio weights and tilted mean at theta; see RatioState."""
    theta = np.asarray(theta, dtype=np.float64)
    psi_y = np.asarray(psi_y, dtype=np.float64)
    if theta.shape != (psi_y.shape[1],):
        raise ValueError(f"theta has length {theta.shape}, need ({psi_y.shape[1]},)")
    scores = psi_y @ theta
    a = scores + _log_weights(psi_y, weights)
    amax = a.max()
    log_zhat = float(amax + np.log(np.exp(a - amax).sum()))
    rhat = np.exp(scores - log_zhat)
    if weights is None:
        muhat = psi_y.T @ rhat / psi_y.shape[0]
    else:
        muhat = psi_y.T @ (weights * rhat)
    return RatioState(theta=theta, log_zhat=log_zhat, rhat=rhat, muhat=muhat)


def loss(theta, problem, state=None):
    """Empirical KLIEP loss at theta."""
    theta = np.asarray(theta, dtype=np.float64)
    if state is None:
        lz = log_partition_hat(theta, problem.psi_y, problem.weights_y)
    else:
        lz = state.log_zhat
    return float(-(problem.mean_x @ theta) + lz)


def gradient(theta, problem, state=None):
    """Exact gradient: tilted y-mean minus the x-sample mean."""
    if state is None:
        state = ratio_state(theta, problem.psi_y, problem.weights_y)
    return state.muhat - problem.mean_x


def hessian(theta, psi_y, weights=None, state=None):
    """Ratio-weighted covariance of the psi_y rows (production form).

    Returns the symmetric PSD matrix
        mean_y[ psi psi' r ] - muhat muhat'
    computed in O(n_y p^2).
    """
    psi_y = np.asarray(psi_y, dtype=np.float64)
    if state is None:
        state = ratio_state(theta, psi_y, weights)
    if weights is None:
        w = state.rhat / psi_y.shape[0]
    else:
        w = weights * state.rhat
    second = psi_y.T @ (psi_y * w[:, None])
    H = second - np.outer(state.muhat, state.muhat)
    return (H + H.T) / 2.0


def hessian_ustat(theta, psi_y, weights=None):
    """Pairwise-difference form of the Hessian; test oracle only.

    Sums w_j w_j' r_j r_j' (psi_j - psi_j')(psi_j - psi_j')' over j < j',
    which agrees with :func:`hessian` up to rounding but costs O(n_y^2 p^2).
    """
    psi_y = np.asarray(psi_y, dtype=np.float64)
    n_y, p = psi_y.shape
    state = ratio_state(theta, psi_y, weights)
    if weights is None:
        w = state.rhat / n_y
    else:
        w = weights * state.rhat
    H = np.zeros((p, p))
    for j in range(n_y - 1):
        diff = psi_y[j] - psi_y[j + 1 :]
        coef = w[j] * w[j + 1 :]
        H += (diff * coef[:, None]).T @ diff
    return (H + H.T) / 2.0
