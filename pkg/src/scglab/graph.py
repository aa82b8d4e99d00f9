"""Random communication topologies and consensus weight matrices.

Each role period the population talks over a fresh connected, sparse,
degree-bounded undirected graph; the critic exchange uses Metropolis
weights on that graph, which are doubly stochastic on any undirected
graph and therefore preserve the population-mean critic parameter.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import TAG_GRAPH, stream

__all__ = [
    "CommGraph",
    "WeightMatrix",
    "random_connected_graph",
    "consensus_weights",
    "graph_for_period",
    "save_edge_list",
]


@dataclass(frozen=True)
class CommGraph:
    """Undirected connected graph as a symmetric boolean adjacency."""

    adjacency: np.ndarray

    def __post_init__(self) -> None:
        adj = self.adjacency
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if adj.dtype != bool:
            raise ValueError("adjacency must be boolean")
        if np.any(adj != adj.T) or np.any(np.diag(adj)):
            raise ValueError("adjacency must be symmetric with zero diagonal")
        if adj.shape[0] > 1 and not _connected(adj):
            raise ValueError("graph must be connected")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edges(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(ii.tolist(), jj.tolist()))


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric doubly stochastic matrix supported on a graph + self-loops."""

    c: np.ndarray

    def __post_init__(self) -> None:
        c = self.c
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("weight matrix must be square")
        if np.any(c < -1e-12):
            raise ValueError("weights must be nonnegative")
        ones = np.ones(c.shape[0])
        if (np.max(np.abs(c @ ones - ones)) > 1e-12
                or np.max(np.abs(c.T @ ones - ones)) > 1e-12):
            raise ValueError("weights must be doubly stochastic")


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def _decode_pruefer(seq: np.ndarray, n: int) -> list[tuple[int, int]]:
    """Edges of the labeled tree encoded by a Pruefer sequence."""
    degree = np.ones(n, dtype=int)
    for x in seq:
        degree[x] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, int(x)))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, int(x))
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append((u, v))
    return edges


def _attachment_tree(n: int, d_max: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Degree-capped random tree for caps too tight for rejection sampling."""
    order = rng.permutation(n)
    degree = np.zeros(n, dtype=int)
    edges = []
    for idx in range(1, n):
        candidates = [int(v) for v in order[:idx] if degree[v] < d_max]
        parent = int(rng.choice(candidates))
        child = int(order[idx])
        edges.append((parent, child))
        degree[parent] += 1
        degree[child] += 1
    return edges


def random_connected_graph(n: int, d_min: int, d_max: int,
                           rng: np.random.Generator,
                           max_tries: int = 2000) -> CommGraph:
    """Uniform random spanning tree (rejection-sampled to the degree cap),
    then random legal extra edges until every degree reaches ``d_min``.

    With the default bounds (``d_min=1``) the tree itself suffices.  A
    degree-capped attachment tree stands in when rejection sampling is
    hopeless (e.g. ``d_max=2`` forces path graphs).
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    if not 1 <= d_min <= d_max <= n - 1:
        raise ValueError("need 1 <= d_min <= d_max <= n-1")
    if n >= 3 and d_max < 2:
        raise ValueError("a connected graph on >= 3 nodes needs d_max >= 2")

    if n == 2:
        edges = [(0, 1)]
    else:
        edges = None
        for _ in range(max_tries):
            seq = rng.integers(0, n, size=n - 2)
            if n > 2 and np.max(np.bincount(seq, minlength=n)) + 1 > d_max:
                continue
            edges = _decode_pruefer(seq, n)
            break
        if edges is None:
            edges = _attachment_tree(n, d_max, rng)

    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True

    if d_min > 1:
        degree = adj.sum(axis=1)
        while True:
            deficient = np.flatnonzero(degree < d_min)
            if deficient.size == 0:
                break
            u = int(deficient[0])
            candidates = np.flatnonzero(~adj[u] & (degree < d_max))
            candidates = candidates[candidates != u]
            if candidates.size == 0:
                raise ValueError(
                    f"cannot raise node {u} to degree {d_min} under cap {d_max}")
            v = int(rng.choice(candidates))
            adj[u, v] = adj[v, u] = True
            degree[u] += 1
            degree[v] += 1

    return CommGraph(adjacency=adj)


def consensus_weights(g: CommGraph) -> WeightMatrix:
    """Metropolis weights: ``1 / (1 + max(d_i, d_j))`` per edge, the
    leftover mass on the diagonal."""
    adj = g.adjacency
    deg = g.degrees
    pair_max = np.maximum.outer(deg, deg).astype(float)
    c = np.where(adj, 1.0 / (1.0 + pair_max), 0.0)
    np.fill_diagonal(c, 0.0)
    np.fill_diagonal(c, 1.0 - c.sum(axis=1))
    return WeightMatrix(c=c)


def graph_for_period(n: int, d_min: int, d_max: int, master_seed: int,
                     episode: int, period: int) -> CommGraph:
    """Fresh topology keyed by (seed, episode, period) — reproducible
    regardless of scheduling."""
    rng = stream(master_seed, TAG_GRAPH, episode, period)
    return random_connected_graph(n, d_min, d_max, rng)


def save_edge_list(g: CommGraph, path) -> None:
    """One ``i j`` pair per line, 0-indexed, sorted."""
    with Path(path).open("w") as fh:
        for i, j in sorted(g.edges()):
            fh.write(f"{i} {j}\n")
