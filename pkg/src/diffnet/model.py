"""Edge indexing, pairwise sufficient statistics, and sample-file I/O.

Every estimation routine in this package consumes an n x p matrix whose
column k holds the per-observation statistic of edge k.  Edges of an
m-node graph are numbered 1..p, p = m*(m-1)/2, in lexicographic order of
the node pair (u, v), u < v:

    (1,2), (1,3), ..., (1,m), (2,3), ..., (m-1,m)

This ordering is part of the on-disk format contract and is shared by all
modules.  Node indices are 1-based everywhere in the public API.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EdgeMap",
    "edge_to_index",
    "index_to_edge",
    "num_edges",
    "nodes_from_edges",
    "ising_suff_stats",
    "load_samples",
    "save_samples",
]


def num_edges(m):
    """Number of pairwise edges of an m-node graph."""
    if m < 2:
        raise ValueError(f"need at least 2 nodes, got m={m}")
    return m * (m - 1) // 2


def nodes_from_edges(p):
    """Invert p = m*(m-1)/2; raises if p is not a valid edge count."""
    m = round((1 + (1 + 8 * p) ** 0.5) / 2)
    if num_edges(max(m, 2)) != p:
        raise ValueError(f"{p} is not C(m,2) for any integer m")
    return m


def edge_to_index(u, v, m):
    """1-based edge index of the node pair (u, v), u < v, in an m-node graph."""
    if not (1 <= u < v <= m):
        raise ValueError(f"need 1 <= u < v <= m, got (u,v,m)=({u},{v},{m})")
    # edges (1,*) ... (u-1,*) come first: (m-1) + (m-2) + ... + (m-u+1)
    before = (u - 1) * m - u * (u - 1) // 2
    return before + (v - u)


def index_to_edge(k, m):
    """Node pair (u, v) of 1-based edge index k in an m-node graph."""
    p = num_edges(m)
    if not (1 <= k <= p):
        raise ValueError(f"edge index {k} out of range 1..{p} for m={m}")
    u = 1
    remaining = k
    while remaining > m - u:
        remaining -= m - u
        u += 1
    return u, u + remaining


@dataclass(frozen=True)
class EdgeMap:
    """Bijection between edge indices 1..p and node pairs of an m-node graph."""

    m: int

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"need at least 2 nodes, got m={self.m}")

    @property
    def p(self):
        return num_edges(self.m)

    def index(self, u, v):
        return edge_to_index(u, v, self.m)

    def pair(self, k):
        return index_to_edge(k, self.m)

    def pairs(self):
        """All node pairs in edge-index order, as an (p, 2) int array."""
        u, v = np.triu_indices(self.m, k=1)
        return np.column_stack([u + 1, v + 1])


def ising_suff_stats(samples):
    """Per-observation edge statistics x_u * x_v for +-1 coded samples.

    Parameters
    ----------
    samples : (n, m) array with entries in {-1, +1}

    Returns
    -------
    (n, p) float array; column k is the product over the k-th node pair.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be 2-d, got shape {x.shape}")
    if not np.all(np.abs(x) == 1.0):
        raise ValueError("Ising samples must have entries in {-1, +1}")
    iu, iv = np.triu_indices(x.shape[1], k=1)
    return x[:, iu] * x[:, iv]


def _sidecar_path(csv_path):
    return str(csv_path) + ".json"


def save_samples(path, samples, m, encoding="ising"):
    """Write a header-less numeric CSV plus its JSON sidecar.

    The sidecar, at ``<path>.json``, records ``{"m": m, "encoding": enc}``
    with enc one of "ising" (rows are +-1 node states) or "raw_psi"
    (rows are precomputed edge statistics).
    """
    if encoding not in ("ising", "raw_psi"):
        raise ValueError(f"unknown encoding {encoding!r}")
    arr = np.asarray(samples)
    if encoding == "ising":
        np.savetxt(path, arr, fmt="%d", delimiter=",")
    else:
        np.savetxt(path, arr, fmt="%.17g", delimiter=",")
    with open(_sidecar_path(path), "w") as fh:
        json.dump({"m": int(m), "encoding": encoding}, fh)
        fh.write("\n")


def load_samples(path, sidecar=None):
    """Read a sample CSV and its sidecar; returns (suff_stats, m, encoding).

    For "ising" encoding the rows are validated as +-1 node states and
    converted to edge statistics; "raw_psi" rows are passed through after a
    column-count check against C(m,2).
    """
    sidecar = sidecar or _sidecar_path(path)
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"missing sample sidecar {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    m, encoding = int(meta["m"]), meta["encoding"]
    data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite entries")
    if encoding == "ising":
        if data.shape[1] != m:
            raise ValueError(f"{path}: expected {m} columns, got {data.shape[1]}")
        return ising_suff_stats(data), m, encoding
    if encoding == "raw_psi":
        if data.shape[1] != num_edges(m):
            raise ValueError(
                f"{path}: expected {num_edges(m)} statistic columns, got {data.shape[1]}"
            )
        return data, m, encoding
    raise ValueError(f"unknown encoding {encoding!r} in {sidecar}")
