"""Ising models: Gibbs sampling, exact enumeration, and experiment graphs.

Models are m-node pairwise binary (+-1) Markov networks with zero node
potentials; the parameter vector follows the edge ordering of
:mod:`diffnet.model`.  Sampling uses a systematic-scan single-site Gibbs
sampler (scan order 1..m, deterministic all-ones start), and models with
m <= 16 can be enumerated exactly, which powers the population-level
oracles used throughout the test-suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kliep import KliepProblem
from .model import EdgeMap, edge_to_index, ising_suff_stats, num_edges
from .solvers import SolverOptions, refit_support

__all__ = [
    "IsingModel",
    "GraphPair",
    "gibbs_sample",
    "exact_enumerate",
    "Enumeration",
    "population_kliep_oracle",
    "make_pair",
    "make_null_graph",
    "perturb_graph",
    "save_graph",
    "load_graph",
    "PAIR_LABELS",
]

ENUM_MAX_NODES = 16

# Sweeps of uniforms drawn per RNG call; bounds memory for long chains.
_GIBBS_CHUNK = 4096


@dataclass(frozen=True)
class IsingModel:
    """Edge weights of an m-node +-1 Markov network (no node potentials)."""

    m: int
    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.ascontiguousarray(self.gamma, dtype=np.float64)
        if gamma.shape != (num_edges(self.m),):
            raise ValueError(
                f"gamma must have length C({self.m},2)={num_edges(self.m)}, "
                f"got {gamma.shape}"
            )
        if not np.all(np.isfinite(gamma)):
            raise ValueError("edge weights must be finite")
        object.__setattr__(self, "gamma", gamma)

    @property
    def p(self):
        return self.gamma.shape[0]

    def coupling_matrix(self):
        """Symmetric (m, m) weight matrix with zero diagonal."""
        W = np.zeros((self.m, self.m))
        iu, iv = np.triu_indices(self.m, k=1)
        W[iu, iv] = self.gamma
        W[iv, iu] = self.gamma
        return W


@dataclass(frozen=True)
class GraphPair:
    """Two models on the same nodes plus their exact parameter difference."""

    gamma_x: IsingModel
    gamma_y: IsingModel
    label: str = "custom"

    def __post_init__(self):
        if self.gamma_x.m != self.gamma_y.m:
            raise ValueError("paired models must share the node count")

    @property
    def m(self):
        return self.gamma_x.m

    @property
    def theta_star(self):
        return self.gamma_x.gamma - self.gamma_y.gamma

    @property
    def support_star(self):
        return np.flatnonzero(self.theta_star)


def gibbs_sample(model, n, burnin, thinning, seed):
    """Draw n states by systematic-scan Gibbs sampling.

    The chain starts from the all +1 state, runs ``burnin`` full sweeps,
    then emits the state after every ``thinning``-th subsequent sweep
    (thinning 0 is treated as 1: every sweep is emitted).  Site v flips to
    +1 with probability (1 + tanh(sum_u W[v,u] x_u)) / 2, its exact full
    conditional.  Fixed seed gives a fixed sample matrix.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if burnin < 0 or thinning < 0:
        raise ValueError("burnin and thinning must be >= 0")
    thin = max(int(thinning), 1)
    m = model.m
    W = model.coupling_matrix()
    rng = np.random.default_rng(seed)
    x = np.ones(m, dtype=np.int8)
    out = np.empty((n, m), dtype=np.int8)
    total = burnin + n * thin
    done = 0
    while done < total:
        block = min(_GIBBS_CHUNK, total - done)
        U = rng.random((block, m))
        keep = np.full(block, -1, dtype=np.int64)
        for s in range(block):
            t = done + s + 1  # completed sweeps after this one
            if t > burnin and (t - burnin) % thin == 0:
                keep[s] = (t - burnin) // thin - 1
        _kernels.gibbs_sweeps(W, x, U, out, keep)
        done += block
    return out.astype(np.float64)


@dataclass(frozen=True)
class Enumeration:
    """Exact distribution of an enumerable model over all 2^m states."""

    states: np.ndarray  # (2^m, m) of +-1
    psi: np.ndarray  # (2^m, p) edge statistics
    probs: np.ndarray  # (2^m,) state probabilities
    mean_psi: np.ndarray  # exact E[psi]
    cov_psi: np.ndarray  # exact Cov[psi]
    log_partition: float  # log sum_s exp(gamma' psi(s))


def _all_states(m):
    codes = np.arange(2**m, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(m)[None, :]) & 1
    return (2 * bits - 1).astype(np.float64)


def exact_enumerate(model):
    """Exact state table, E[psi], and Cov[psi]; refuses m > 16."""
    if model.m > ENUM_MAX_NODES:
        raise ValueError(f"exact enumeration capped at m={ENUM_MAX_NODES}")
    states = _all_states(model.m)
    psi = ising_suff_stats(states)
    logits = psi @ model.gamma
    shift = logits.max()
    w = np.exp(logits - shift)
    total = w.sum()
    probs = w / total
    log_partition = float(shift + np.log(total))
    mean_psi = probs @ psi
    second = psi.T @ (psi * probs[:, None])
    cov = second - np.outer(mean_psi, mean_psi)
    return Enumeration(
        states=states,
        psi=psi,
        probs=probs,
        mean_psi=mean_psi,
        cov_psi=(cov + cov.T) / 2.0,
        log_partition=log_partition,
    )


def sample_exact(model, n, seed):
    """n i.i.d. draws from an enumerable model (categorical over states)."""
    enum = exact_enumerate(model)
    rng = np.random.default_rng(seed)
    idx = rng.choice(enum.states.shape[0], size=n, p=enum.probs)
    return enum.states[idx]


def population_kliep_oracle(pair, tol=1e-10, max_iter=200):
    """Minimize the population loss of a pair by exact enumeration.

    Builds the weighted loss whose row weights are the exact state
    distributions of the two models and solves the unrestricted problem by
    Newton's method.  The minimizer equals gamma_x - gamma_y; the gradient
    norm at the solution certifies convergence.

    Returns (theta, info) where info has ``converged`` and ``grad_norm``.
    """
    ex = exact_enumerate(pair.gamma_x)
    ey = exact_enumerate(pair.gamma_y)
    problem = KliepProblem(
        psi_x=ex.psi, psi_y=ey.psi, weights_x=ex.probs, weights_y=ey.probs
    )
    opts = SolverOptions(max_iter=max_iter, tol_newton=tol)
    res = refit_support(problem, support=range(problem.p), opts=opts)
    return res.theta, res


# Edge weights displayed in the experiment figures.  Keys are 1-based node
# pairs; chains continue past the displayed prefix and trees continue past
# node 40 with Unif(-1,1) weights drawn from the pair seed.

_CHAIN_X = {
    (1, 2): -0.54, (2, 3): -0.85, (3, 4): 0.74, (4, 5): 0.56, (5, 6): -0.06,
    (6, 7): -0.10, (7, 8): 0.11, (8, 9): 0.35, (9, 10): 0.09, (10, 11): 0.20,
}

# y-graph overrides: changed weights on existing edges plus extra edges.
_CHAIN1_Y = {
    (4, 5): 0.16, (5, 6): 0.14, (6, 7): 0.30, (4, 6): -0.20, (5, 7): -0.20,
}
_CHAIN2_Y = {
    (3, 4): 0.34, (4, 5): 0.36, (5, 6): 0.14, (7, 8): -0.29, (4, 6): -0.20,
}

_TREE1_X = {
    (1, 2): -0.54, (1, 3): -0.85, (1, 4): 0.74,
    (2, 5): 0.56, (2, 6): -0.06, (2, 7): -0.10,
    (3, 8): 0.11, (3, 9): 0.35, (3, 10): 0.09,
    (4, 11): -0.20, (4, 12): -0.90, (4, 13): 0.97,
    (5, 14): -0.70, (5, 15): -0.58, (5, 16): 0.67,
    (6, 17): 0.17, (6, 18): -0.29, (6, 19): -0.95,
    (7, 20): 0.62, (7, 21): 0.88, (7, 22): 0.86,
    (8, 23): -0.16, (8, 24): -0.51, (8, 25): -0.04,
    (9, 26): 0.94, (9, 27): -0.79, (9, 28): -0.41,
    (10, 29): 0.21, (10, 30): 0.79, (10, 31): 0.18,
    (11, 32): 0.70, (11, 33): 0.86, (11, 34): 0.70,
    (12, 35): 0.99, (12, 36): -0.38, (12, 37): 0.35,
    (13, 38): 0.96, (13, 39): -0.13, (13, 40): -0.52,
}
_TREE1_Y = {
    (1, 2): -0.14, (1, 3): -0.65, (3, 8): -0.29, (1, 9): 0.20, (3, 4): -0.20,
}

_TREE2_X = dict(_TREE1_X)
_TREE2_X.update({
    (4, 11): 0.20, (4, 12): -0.32, (4, 13): -0.27,
    (5, 14): -0.21, (5, 15): -0.13, (5, 16): -0.30,
    (6, 17): 0.95, (6, 18): -0.59, (6, 19): -0.51,
    (7, 20): -0.81, (7, 21): -0.75, (7, 22): 0.70,
    (8, 23): -0.82, (8, 24): 0.47, (8, 25): -0.99,
})
_TREE2_Y = {
    (2, 5): 0.16, (8, 23): -0.42, (1, 3): -0.65, (2, 3): -0.20, (3, 4): -0.20,
}

PAIR_LABELS = ("chain1", "chain2", "tree1", "tree2")


def _chain_edges(m):
    return [(v, v + 1) for v in range(1, m)]


def _tree_edges(m):
    # complete 3-ary tree: parent of v is floor((v - 2) / 3) + 1
    return [((v - 2) // 3 + 1, v) for v in range(2, m + 1)]


def _structured_gamma(m, edges, table, rng):
    gamma = np.zeros(num_edges(m))
    for (u, v) in edges:
        w = table.get((u, v))
        if w is None:
            w = rng.uniform(-1.0, 1.0)
        gamma[edge_to_index(u, v, m) - 1] = w
    return gamma


def make_pair(label, m, seed=0):
    """A figure-specified x/y model pair on m nodes.

    The structural skeleton (chain or 3-ary tree) and every changed edge
    take the exact displayed weights; unchanged weights beyond the
    displayed prefix are Unif(-1,1) draws from ``seed``.  The smallest
    usable m carries every changed edge (10 for chains and tree1, 23 for
    tree2), so desk-scale runs keep the full difference pattern.
    """
    if label not in PAIR_LABELS:
        raise ValueError(f"unknown pair label {label!r}; expected {PAIR_LABELS}")
    rng = np.random.default_rng(seed)
    if label.startswith("chain"):
        edges = _chain_edges(m)
        x_table = _CHAIN_X
        y_table = _CHAIN1_Y if label == "chain1" else _CHAIN2_Y
    else:
        edges = _tree_edges(m)
        x_table = _TREE1_X if label == "tree1" else _TREE2_X
        y_table = _TREE1_Y if label == "tree1" else _TREE2_Y
    min_m = max(max(v for (_, v) in y_table), 10)
    if m < min_m:
        raise ValueError(f"pair {label!r} needs m >= {min_m} to carry its changes")
    gx = _structured_gamma(m, edges, x_table, rng)
    gy = gx.copy()
    for (u, v), w in y_table.items():
        gy[edge_to_index(u, v, m) - 1] = w
    return GraphPair(
        gamma_x=IsingModel(m, gx), gamma_y=IsingModel(m, gy), label=label
    )


def make_null_graph(kind, m, seed=0):
    """Disjoint union of m/5 five-node chains with sign-patterned weights."""
    kinds = ("positive", "mixed", "negative")
    if kind not in kinds:
        raise ValueError(f"unknown kind {kind!r}; expected {kinds}")
    if m % 5 != 0 or m < 5:
        raise ValueError(f"m must be a positive multiple of 5, got {m}")
    rng = np.random.default_rng(seed)
    gamma = np.zeros(num_edges(m))
    for c in range(m // 5):
        base = 5 * c + 1
        for v in range(base, base + 4):
            w = rng.uniform(0.2, 0.4)
            if kind == "negative" or (kind == "mixed" and rng.random() < 0.5):
                w = -w
            gamma[edge_to_index(v, v + 1, m) - 1] = w
    return IsingModel(m, gamma)


def perturb_graph(base, s_theta, l, seed=0):
    """Pair whose x-model differs from ``base`` on s_theta random edges.

    Each chosen edge (uniform without replacement over all C(m,2) edges)
    has an independent Unif(l, l+0.1) amount subtracted in the x-model;
    the y-model is ``base`` itself, so the difference support has exactly
    s_theta entries (almost surely).
    """
    if s_theta < 0:
        raise ValueError("s_theta must be >= 0")
    rng = np.random.default_rng(seed)
    gx = base.gamma.copy()
    if s_theta > 0:
        chosen = rng.choice(base.p, size=s_theta, replace=False)
        delta = rng.uniform(l, l + 0.1, size=s_theta)
        gx[chosen] -= delta
    return GraphPair(
        gamma_x=IsingModel(base.m, gx), gamma_y=base, label="perturbed"
    )


def save_graph(path, model):
    """Write a model as JSON: {"m": m, "edges": [{"u","v","weight"}, ...]}."""
    emap = EdgeMap(model.m)
    edges = [
        {"u": int(u), "v": int(v), "weight": float(w)}
        for (u, v), w in zip(map(tuple, emap.pairs()), model.gamma)
        if w != 0.0
    ]
    with open(path, "w") as fh:
        json.dump({"m": model.m, "edges": edges}, fh, indent=1)
        fh.write("\n")


def load_graph(path):
    with open(path) as fh:
        doc = json.load(fh)
    m = int(doc["m"])
    gamma = np.zeros(num_edges(m))
    for e in doc["edges"]:
        gamma[edge_to_index(int(e["u"]), int(e["v"]), m) - 1] = float(e["weight"])
    return IsingModel(m, gamma)
