"""Weighted directed graphs, k-hop neighborhoods, and spectral filters.

Graphs are immutable values: node set {0..N-1}, directed edges with one
real weight each, self-loops allowed, and an integer topology index that
tags the graph when several topologies coexist in a run.  The neighbor
convention follows the in-edge rule: the 1-hop neighbors of node i are the
sources of edges pointing at i, plus i itself.

The spectral side builds the weighted graph Laplacian L = D - W, estimates
its largest eigenvalue by power iteration, and rescales to
Lt = (2/lambda_max) L - I so that the spectrum lands in [-1, 1], the
domain of the Chebyshev polynomials used by the convolution layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .rng import SplitMix64

__all__ = [
    "Graph",
    "HopSets",
    "SpectralFilter",
    "PowerIterationError",
    "build_graph",
    "k_hop",
    "average_degree",
    "weighted_laplacian",
    "chebyshev_apply",
]


class PowerIterationError(RuntimeError):
    """Largest-eigenvalue estimate failed to converge; carries the residual."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"power iteration did not converge in {iterations} iterations "
            f"(last relative residual {residual:.3e})"
        )


@dataclass(frozen=True)
class Graph:
    """Immutable weighted directed graph with self-loops permitted."""

    node_count: int
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    topology_index: int = 0
    _in_neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for (i, j) in self.edges:
            if j != i:
                nbrs[j].append(i)
        object.__setattr__(
            self, "_in_neighbors", tuple(tuple(sorted(ns)) for ns in nbrs)
        )

    def weight_of(self, i: int, j: int) -> float:
        try:
            return self.weights[self.edges.index((i, j))]
        except ValueError:
            raise KeyError(f"no edge ({i}, {j})") from None

    def weight_matrix(self) -> np.ndarray:
        """Dense W with [W]_ij = weight of edge (i, j), zero elsewhere."""
        w = np.zeros((self.node_count, self.node_count))
        for (i, j), wij in zip(self.edges, self.weights):
            w[i, j] = wij
        return w

    def neighbors(self, i: int) -> frozenset[int]:
        """1-hop neighbor set: in-edge sources of i plus i itself."""
        if not 0 <= i < self.node_count:
            raise ValueError(f"node {i} out of range [0, {self.node_count})")
        return frozenset(self._in_neighbors[i]) | {i}

    def with_index(self, topology_index: int) -> "Graph":
        return replace(self, topology_index=topology_index)


@dataclass(frozen=True)
class HopSets:
    """Hop neighborhoods of one node: cumulative set and exact-distance shells."""

    node: int
    k: int
    shells: tuple[frozenset[int], ...]

    @property
    def cumulative(self) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        return out.union(*self.shells)

    @property
    def exact(self) -> frozenset[int]:
        return self.shells[self.k]


@dataclass(frozen=True)
class SpectralFilter:
    """Weighted Laplacian L = D - W with its spectrum-normalizing transform."""

    laplacian: np.ndarray
    lambda_max: float
    transformed: np.ndarray


def build_graph(
    n: int,
    edges: list[tuple[int, int, float]],
    index: int = 0,
) -> Graph:
    """Construct a graph from (source, target, weight) triples.

    Raises ValueError on endpoints outside [0, n) and on duplicate (i, j)
    pairs; an (i, j) and a (j, i) edge are distinct.
    """
    if n < 1:
        raise ValueError("node count must be at least 1")
    seen: set[tuple[int, int]] = set()
    pairs: list[tuple[int, int]] = []
    weights: list[float] = []
    for (i, j, w) in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"endpoint out of range: ({i}, {j}) with n={n}")
        if (i, j) in seen:
            raise ValueError(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
        pairs.append((i, j))
        weights.append(float(w))
    return Graph(n, tuple(pairs), tuple(weights), topology_index=index)


def k_hop(graph: Graph, node: int, k: int) -> HopSets:
    """Hop sets of `node` up to distance k under the in-neighbor convention.

    shell[0] = {node}; shell[j] holds nodes first reached at hop j.  The
    cumulative set is monotone in k and stabilizes at the set of nodes with
    a directed path into `node`.
    """
    if not 0 <= node < graph.node_count:
        raise ValueError(f"node {node} out of range [0, {graph.node_count})")
    if k < 0:
        raise ValueError("hop count must be non-negative")
    shells = [frozenset({node})]
    cumulative = {node}
    frontier = {node}
    for _ in range(k):
        # neighbors() always contains the node itself, so expanding only the
        # newest shell gives the same union as expanding the full set
        if not frontier:
            shells.append(frozenset())
            continue
        reached: set[int] = set()
        for n_ in frontier:
            reached.update(graph.neighbors(n_))
        new = reached - cumulative
        shells.append(frozenset(new))
        cumulative |= new
        frontier = new
    return HopSets(node=node, k=k, shells=tuple(shells))


def average_degree(graph: Graph, include_self: bool = False) -> float:
    """Mean 1-hop neighbor count over all nodes.

    include_self=True counts each node as its own neighbor (the formal
    definition); the default excludes it, which is the convention the
    analysis routines use for the degree-times-decay products.
    """
    total = 0
    for i in range(graph.node_count):
        nbrs = graph.neighbors(i)
        total += len(nbrs) if include_self else len(nbrs - {i})
    return total / graph.node_count


def weighted_laplacian(
    graph: Graph,
    symmetrize: bool = True,
    rel_tol: float = 1e-8,
    max_iter: int = 10_000,
    seed: int = 0x5EED,
) -> SpectralFilter:
    """Build L = D - W and its Chebyshev-domain transform.

    D_ii is the row sum of W including any self-weight, so self-loop
    weights cancel exactly in L.  With `symmetrize`, an asymmetric W is
    replaced by (W + W^T)/2 before forming L (all shipped weight maps are
    symmetric; the flag exists for externally supplied graphs).

    lambda_max comes from power iteration started at a seed-derived vector,
    run to relative tolerance `rel_tol` with an iteration cap; a degenerate
    all-zero L falls back to lambda_max = 0 and Lt = -I.
    """
    w = graph.weight_matrix()
    if symmetrize and not np.array_equal(w, w.T):
        w = 0.5 * (w + w.T)
    lap = np.diag(w.sum(axis=1)) - w
    n = graph.node_count

    lam = _power_iteration(lap, rel_tol, max_iter, seed)
    if lam <= 0.0:
        transformed = -np.eye(n)
        lam = 0.0
    else:
        transformed = (2.0 / lam) * lap - np.eye(n)
    return SpectralFilter(laplacian=lap, lambda_max=lam, transformed=transformed)


def _power_iteration(mat: np.ndarray, rel_tol: float, max_iter: int, seed: int) -> float:
    n = mat.shape[0]
    if not np.any(mat):
        return 0.0
    v = SplitMix64(seed).uniform_array(n, 0.1, 1.0)
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    residual = np.inf
    for _ in range(max_iter):
        mv = mat @ v
        norm = np.linalg.norm(mv)
        if norm == 0.0:
            return 0.0
        v = mv / norm
        lam = float(v @ (mat @ v))
        residual = abs(lam - lam_prev) / max(abs(lam), np.finfo(float).tiny)
        if residual <= rel_tol:
            return lam
        lam_prev = lam
    raise PowerIterationError(max_iter, residual)


def chebyshev_apply(filt: SpectralFilter, h: np.ndarray, order: int) -> list[np.ndarray]:
    """[T_s(Lt) @ H for s = 0..order] via the three-term recurrence.

    T_0 H = H, T_1 H = Lt H, T_s H = 2 Lt T_{s-1} H - T_{s-2} H.  Output s
    mixes information from at most s-hop neighbors.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("feature matrix must be 2-D (nodes x features)")
    lt = filt.transformed
    if h.shape[0] != lt.shape[0]:
        raise ValueError(
            f"feature rows ({h.shape[0]}) != node count ({lt.shape[0]})"
        )
    if order < 0:
        raise ValueError("order must be non-negative")
    out = [h]
    if order >= 1:
        out.append(lt @ h)
    for _ in range(2, order + 1):
        out.append(2.0 * (lt @ out[-1]) - out[-2])
    return out
