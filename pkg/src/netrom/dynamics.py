"""Full-order simulation of oscillator dynamics on (time-varying) graphs.

The Kuramoto system couples phase oscillators along graph edges:

    dtheta_i/dt = omega_i + sum_{j in N_i} kappa_ij sin(theta_j - theta_i)

with the coupling kappa_ij stored as the weight of the in-edge (j, i).
Integration is fixed-step classical RK4 at the sampling interval, so sample
times, recorded topology indices, and integration steps share one grid.
Topology switches are described by a Schedule: at a segment boundary the
active graph changes and the state carries over unchanged.

Angles are kept unwrapped; `embed_state` maps them to the per-node
(cos, sin) plane when the block form of the dynamics is needed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .graphs import Graph, build_graph
from .rng import SplitMix64, child_seed

__all__ = [
    "KuramotoSystem",
    "Schedule",
    "Trajectory",
    "SimulationError",
    "kuramoto_rhs",
    "embed_state",
    "rk4_step",
    "simulate",
    "generate_topology",
    "generate_topology_pool",
    "natural_frequencies",
]


class SimulationError(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class KuramotoSystem:
    """Natural frequencies plus the pool of candidate coupling topologies.

    Couplings are the edge weights of the pooled graphs and must be
    positive; `graphs[j].topology_index == j` so a schedule can refer to
    topologies by index.
    """

    omega: np.ndarray
    graphs: tuple[Graph, ...]

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64))
        if not self.graphs:
            raise ValueError("topology pool is empty")
        n = self.graphs[0].node_count
        if self.omega.shape != (n,):
            raise ValueError(f"omega length {self.omega.shape} != node count {n}")
        for j, g in enumerate(self.graphs):
            if g.node_count != n:
                raise ValueError("pool graphs must share the node set")
            if g.topology_index != j:
                raise ValueError(f"pool graph {j} carries topology_index {g.topology_index}")
            if any(w <= 0 for w in g.weights):
                raise ValueError("couplings must be positive")

    def coupling_matrix(self, j: int) -> np.ndarray:
        """K with K[i, :] holding the couplings of node i's in-edges."""
        return self.graphs[j].weight_matrix().T

    def description_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.omega.tobytes())
        for g in self.graphs:
            h.update(repr((g.node_count, g.edges, g.weights)).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant topology assignment over [0, total_time].

    Segment k is active on [start_k, start_{k+1}); the first segment must
    start at 0 and starts must be strictly increasing.
    """

    segments: tuple[tuple[float, int], ...]
    total_time: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0 or self.total_time <= 0:
            raise ValueError("dt and total_time must be positive")
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        starts = [s for s, _ in self.segments]
        if starts[0] != 0.0:
            raise ValueError("first segment must start at t=0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")

    def index_at(self, t: float) -> int:
        """Topology index active at time t (boundary samples get the new index)."""
        active = self.segments[0][1]
        for start, j in self.segments:
            if t >= start - 1e-9 * self.dt:
                active = j
            else:
                break
        return active

    def sample_indices(self, n_samples: int) -> np.ndarray:
        return np.array([self.index_at(k * self.dt) for k in range(n_samples)], dtype=np.int64)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states with the topology index active at each sample."""

    times: np.ndarray
    states: np.ndarray
    topo_indices: np.ndarray
    meta: dict

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) != len(self.topo_indices):
            raise ValueError("times, states, topo_indices must have equal length")

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.meta["dt"])


def kuramoto_rhs(
    theta: np.ndarray,
    graph: Graph,
    omega: np.ndarray,
    kappa: np.ndarray | dict | None = None,
) -> np.ndarray:
    """Phase velocities of the coupled oscillator network.

    `kappa` overrides the graph's edge weights: either a dense matrix laid
    out like graph.weight_matrix() or a {(i, j): value} mapping that must
    cover every edge.
    """
    theta = np.asarray(theta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if kappa is None:
        k = graph.weight_matrix().T
    elif isinstance(kappa, dict):
        k = np.zeros((graph.node_count, graph.node_count))
        for (i, j) in graph.edges:
            if (i, j) not in kappa:
                raise ValueError(f"missing coupling for edge ({i}, {j})")
            k[j, i] = kappa[(i, j)]
    else:
        k = np.asarray(kappa, dtype=np.float64).T
    phase_diff = np.sin(theta[None, :] - theta[:, None])
    return omega + (k * phase_diff).sum(axis=1)


def embed_state(theta: np.ndarray) -> np.ndarray:
    """Per-node (cos, sin) embedding, node-major: x = (c_0, s_0, c_1, s_1, ...)."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty(2 * theta.shape[0])
    out[0::2] = np.cos(theta)
    out[1::2] = np.sin(theta)
    return out


def rk4_step(rhs, state: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step; raises SimulationError on blow-up."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = rhs(state, t)
    k2 = rhs(state + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(state + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(state + dt * k3, t + dt)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError(f"non-finite state after step at t={t:.6g}")
    return out


def simulate(system: KuramotoSystem, schedule: Schedule, init: np.ndarray, seed: int = 0) -> Trajectory:
    """Integrate the system over the schedule from the given initial angles.

    Samples land on the dt grid; the step from t_k uses the topology active
    at t_k, so the boundary sample already carries the new index and the
    state is carried across switches unmodified.
    """
    init = np.asarray(init, dtype=np.float64)
    n = system.graphs[0].node_count
    if init.shape != (n,):
        raise ValueError(f"init length {init.shape} != node count {n}")
    for _, j in schedule.segments:
        if not 0 <= j < len(system.graphs):
            raise ValueError(f"schedule references unknown topology {j}")

    n_steps = int(round(schedule.total_time / schedule.dt))
    times = np.arange(n_steps + 1) * schedule.dt
    indices = schedule.sample_indices(n_steps + 1)
    kmats = {j: system.coupling_matrix(j) for j in set(int(i) for i in indices)}
    omega = system.omega

    states = np.empty((n_steps + 1, n))
    states[0] = init
    for k in range(n_steps):
        km = kmats[int(indices[k])]

        def rhs(th, _t, _km=km):
            diff = np.sin(th[None, :] - th[:, None])
            return omega + (_km * diff).sum(axis=1)

        try:
            states[k + 1] = rk4_step(rhs, states[k], times[k], schedule.dt)
        except SimulationError as err:
            raise SimulationError(f"{err} (sample {k + 1})") from None

    meta = {
        "seed": seed,
        "dt": schedule.dt,
        "system": system.description_hash(),
        "kind": "angles",
    }
    return Trajectory(times=times, states=states, topo_indices=indices, meta=meta)


def _intra_edges(sizes: list[int], rng: SplitMix64) -> list[tuple[int, int, float]]:
    """Complete symmetric coupling inside each consecutive node block."""
    edges: list[tuple[int, int, float]] = []
    start = 0
    for size in sizes:
        members = range(start, start + size)
        for a in members:
            for b in members:
                if a < b:
                    edges.append((a, b, rng.uniform()))
        start += size
    return edges


def _inter_pairs(m: int, rng: SplitMix64) -> list[tuple[int, int]]:
    """Group pairs to connect: each group asks for 1 or 2 partners, nobody exceeds 2."""
    pairs: list[tuple[int, int]] = []
    deg = [0] * m
    for g in range(m):
        want = 1 + rng.randint(2)
        while deg[g] < want:
            candidates = [
                h for h in range(m)
                if h != g and deg[h] < 2 and (min(g, h), max(g, h)) not in pairs
            ]
            if not candidates:
                break
            h = candidates[rng.randint(len(candidates))]
            pairs.append((min(g, h), max(g, h)))
            deg[g] += 1
            deg[h] += 1
    return pairs


def generate_topology(
    groups: int,
    group_sizes: list[int],
    kappa_range: tuple[float, float],
    seed: int,
    index: int = 0,
) -> Graph:
    """Random grouped topology: complete inside groups, sparse across.

    Nodes are consecutive blocks per group.  Every group connects to at
    most two other groups; each connected group pair gets exactly one
    undirected edge between uniformly chosen members.  All couplings are
    drawn i.i.d. from U([kappa_l, kappa_u]) and stored symmetrically.
    """
    lo, hi = kappa_range
    if groups < 2:
        raise ValueError("need at least 2 groups")
    if len(group_sizes) != groups or any(s < 1 for s in group_sizes):
        raise ValueError("group_sizes must list a positive size per group")
    if lo <= 0 or lo >= hi:
        raise ValueError("coupling range must satisfy 0 < kappa_l < kappa_u")

    intra = _intra_edges(group_sizes, SplitMix64(child_seed(seed, 0)))
    rng = SplitMix64(child_seed(seed, 1))
    inter = _cross_group_edges(group_sizes, _inter_pairs(groups, rng), rng)

    edges: list[tuple[int, int, float]] = []
    for (a, b, u) in intra + inter:
        w = lo + (hi - lo) * u
        edges.append((a, b, w))
        edges.append((b, a, w))
    n = sum(group_sizes)
    return build_graph(n, edges, index=index)


def _cross_group_edges(
    sizes: list[int], pairs: list[tuple[int, int]], rng: SplitMix64
) -> list[tuple[int, int, float]]:
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    edges = []
    for (g, h) in pairs:
        a = int(offsets[g]) + rng.randint(sizes[g])
        b = int(offsets[h]) + rng.randint(sizes[h])
        edges.append((a, b, rng.uniform()))
    return edges


def generate_topology_pool(
    groups: int,
    group_sizes: list[int],
    kappa_range: tuple[float, float],
    n_topologies: int,
    seed: int,
) -> tuple[Graph, ...]:
    """Pool of topologies sharing intra-group structure, differing across groups.

    The intra-group edges (and their couplings) are drawn once; each pool
    member redraws which groups connect and through which member nodes.
    """
    lo, hi = kappa_range
    if lo <= 0 or lo >= hi:
        raise ValueError("coupling range must satisfy 0 < kappa_l < kappa_u")
    if n_topologies < 1:
        raise ValueError("pool needs at least one topology")
    intra = _intra_edges(group_sizes, SplitMix64(child_seed(seed, 0)))
    n = sum(group_sizes)
    pool = []
    for t in range(n_topologies):
        rng = SplitMix64(child_seed(seed, t + 1))
        inter = _cross_group_edges(group_sizes, _inter_pairs(groups, rng), rng)
        edges = []
        for (a, b, u) in intra + inter:
            w = lo + (hi - lo) * u
            edges.append((a, b, w))
            edges.append((b, a, w))
        pool.append(build_graph(n, edges, index=t))
    return tuple(pool)


def natural_frequencies(n: int, seed: int, lo: float = 1.0, hi: float = 15.0) -> np.ndarray:
    """i.i.d. natural frequencies from U([lo, hi]), deterministic per seed."""
    if n < 1:
        raise ValueError("need at least one node")
    return SplitMix64(seed).uniform_array(n, lo, hi)
