"""Coarse-graining of graph dynamics: partitions, bases, and projections.

Nodes are divided into M non-overlapping groups.  Group j keeps a resolved
variable xbar_j through a basis pair (Phi_j, Psi_j): the columns of Phi_j
span what survives coarse-graining, Psi_j spans the discarded complement,
and Phi_j^T Psi_j = O.  Block left inverses give the projections

    xbar = PhiPlus x,    x = Phi xbar + Psi x',    P = Phi PhiPlus.

For embedded oscillator states the shipped basis is group averaging:
Phi_j is the all-ones column over the 2|V_j| embedded components, so the
resolved variable is the group mean of cos+sin.  Psi_j is an orthonormal
completion rescaled so that |Psi|_2 = |Phi|_2 = R = max_j sqrt(2 |V_j|).

Coarse interaction strengths follow the averaging convention

    b11[i, j] = (1 / (2 |V_i|)) * sum_{k in V_i, l in V_j} kappa_kl,

including i = j, where intra-group couplings surface as self-interaction.
These scalars become the edge weights of the coarse graph.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import Trajectory, embed_state
from .graphs import Graph, build_graph

__all__ = [
    "Partition",
    "CoarseMap",
    "build_partition",
    "kuramoto_averaging_basis",
    "left_inverse",
    "coarse_coefficients",
    "coarse_graph",
    "observable",
    "admittance_weights",
    "solve_admittance_eta",
    "coarse_trajectory",
]

_GRAM_PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class Partition:
    """Assignment of nodes to groups plus per-node state dimensions."""

    assignment: tuple[int, ...]
    node_dims: tuple[int, ...]
    n_groups: int

    @property
    def n_nodes(self) -> int:
        return len(self.assignment)

    @property
    def total_dim(self) -> int:
        return sum(self.node_dims)

    def members(self, group: int) -> tuple[int, ...]:
        return tuple(i for i, g in enumerate(self.assignment) if g == group)

    def node_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.node_dims)))


@dataclass(frozen=True)
class CoarseMap:
    """Basis pair with left inverses and (optionally) coarse coefficients."""

    partition: Partition
    phi_blocks: tuple[np.ndarray, ...]
    psi_blocks: tuple[np.ndarray, ...]
    phi: np.ndarray
    psi: np.ndarray
    phi_plus: np.ndarray
    psi_plus: np.ndarray
    radius: float
    a11: tuple[np.ndarray, ...] | None = None
    b11: np.ndarray | None = None

    @property
    def resolved_dims(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.phi_blocks)

    @property
    def n_resolved(self) -> int:
        return self.phi.shape[1]

    def with_coefficients(self, a11, b11) -> "CoarseMap":
        return replace(self, a11=tuple(a11), b11=np.asarray(b11, dtype=np.float64))


def build_partition(node_dims: list[int], assignment: list[int]) -> Partition:
    """Validate an assignment: every node placed, every group non-empty."""
    if len(node_dims) != len(assignment):
        raise ValueError("node_dims and assignment must have equal length")
    if any(d < 1 for d in node_dims):
        raise ValueError("node dimensions must be positive")
    if any(g is None or g < 0 for g in assignment):
        raise ValueError("every node must be assigned to a group")
    m = max(assignment) + 1
    counts = [0] * m
    for g in assignment:
        counts[g] += 1
    if any(c == 0 for c in counts):
        empty = counts.index(0)
        raise ValueError(f"group {empty} is empty")
    return Partition(tuple(assignment), tuple(node_dims), m)


def blocks_of_groups(partition: Partition) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per group: (member node ids, embedded row indices) in node order."""
    offsets = partition.node_offsets()
    out = []
    for g in range(partition.n_groups):
        members = np.array(partition.members(g), dtype=np.int64)
        rows = np.concatenate(
            [np.arange(offsets[i], offsets[i + 1]) for i in members]
        )
        out.append((members, rows))
    return out


def _assemble(partition: Partition, blocks: tuple[np.ndarray, ...], transpose: bool) -> np.ndarray:
    """Scatter per-group blocks into the full (N_x x n) or (n x N_x) matrix."""
    col_dims = [b.shape[1] if not transpose else b.shape[0] for b in blocks]
    col_offsets = np.concatenate(([0], np.cumsum(col_dims)))
    n_x = partition.total_dim
    total = int(col_offsets[-1])
    full = np.zeros((n_x, total)) if not transpose else np.zeros((total, n_x))
    for g, (_, rows) in enumerate(blocks_of_groups(partition)):
        cols = np.arange(col_offsets[g], col_offsets[g + 1])
        if not transpose:
            full[np.ix_(rows, cols)] = blocks[g]
        else:
            full[np.ix_(cols, rows)] = blocks[g]
    return full


def left_inverse(
    phi_blocks: tuple[np.ndarray, ...],
    psi_blocks: tuple[np.ndarray, ...],
) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Block left inverses: B+ = (B^T B)^{-1} B^T per group, for both bases.

    Requires each block to have full column rank (smallest Gram eigenvalue
    above 1e-12 relative to the largest) and Phi_j^T Psi_j = O, which makes
    PhiPlus annihilate Psi and vice versa.
    """
    def block_pinv(block: np.ndarray, label: str) -> np.ndarray:
        if block.shape[1] == 0:
            return np.zeros((0, block.shape[0]))
        gram = block.T @ block
        eigs = np.linalg.eigvalsh(gram)
        if eigs[0] < _GRAM_PIVOT_TOL * max(1.0, eigs[-1]):
            raise ValueError(
                f"{label} block is rank deficient (Gram pivot {eigs[0]:.3e})"
            )
        return np.linalg.solve(gram, block.T)

    phi_plus = tuple(block_pinv(b, "Phi") for b in phi_blocks)
    psi_plus = tuple(block_pinv(b, "Psi") for b in psi_blocks)
    return phi_plus, psi_plus


def kuramoto_averaging_basis(partition: Partition) -> CoarseMap:
    """Averaging basis over embedded (cos, sin) states: one resolved dim per group.

    Phi_j = ones(2 |V_j|, 1) with PhiPlus_j = ones^T / (2 |V_j|); Psi_j is
    an orthonormal completion of the complement (Gram-Schmidt over the
    standard basis), rescaled so |Psi|_2 = |Phi|_2 = R.
    """
    if any(d != 2 for d in partition.node_dims):
        raise ValueError("averaging basis requires every node dimension to be 2")

    sizes = [2 * len(partition.members(g)) for g in range(partition.n_groups)]
    radius = max(np.sqrt(s) for s in sizes)

    phi_blocks = []
    psi_blocks = []
    for dim in sizes:
        phi = np.ones((dim, 1))
        comp = _orthonormal_complement(phi)
        phi_blocks.append(phi)
        psi_blocks.append(radius * comp)

    phi_plus_blocks, psi_plus_blocks = left_inverse(tuple(phi_blocks), tuple(psi_blocks))
    return CoarseMap(
        partition=partition,
        phi_blocks=tuple(phi_blocks),
        psi_blocks=tuple(psi_blocks),
        phi=_assemble(partition, tuple(phi_blocks), transpose=False),
        psi=_assemble(partition, tuple(psi_blocks), transpose=False),
        phi_plus=_assemble(partition, phi_plus_blocks, transpose=True),
        psi_plus=_assemble(partition, psi_plus_blocks, transpose=True),
        radius=float(radius),
    )


def _orthonormal_complement(basis: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the complement of `basis`, deterministically."""
    dim, rank = basis.shape
    if rank == dim:
        return np.zeros((dim, 0))
    q, _ = np.linalg.qr(basis)
    cols = []
    for k in range(dim):
        v = np.zeros(dim)
        v[k] = 1.0
        v -= q @ (q.T @ v)
        for c in cols:
            v -= c * (c @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            cols.append(v / norm)
        if len(cols) == dim - rank:
            break
    if len(cols) != dim - rank:
        raise ValueError("failed to complete basis")
    return np.stack(cols, axis=1)


def observable(cmap: CoarseMap, x: np.ndarray) -> np.ndarray:
    """Resolved coordinates xbar = PhiPlus x; batched over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cmap.partition.total_dim:
        raise ValueError(
            f"state length {x.shape[-1]} != total dimension {cmap.partition.total_dim}"
        )
    return x @ cmap.phi_plus.T


def coarse_coefficients(
    cmap: CoarseMap,
    alpha_blocks: list[np.ndarray],
    coupling: np.ndarray,
) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Coarse coefficients (a11 per group, b11 matrix) under the map.

    a11_i = sum_{k in V_i} PhiPlus_ik alpha_k Phi_ki, computed from the
    embedded blocks; it is block-diagonal by construction, so only the
    diagonal blocks are returned.

    b11[i, j] aggregates the scalar pairwise strengths `coupling[k, l]`
    over the group pair with the resolved-side scaling of the averaging
    map (the constant row value of PhiPlus_i), which for group averaging
    is 1 / (2 |V_i|).  Requires scalar resolved dimensions.
    """
    part = cmap.partition
    coupling = np.asarray(coupling, dtype=np.float64)
    if coupling.shape != (part.n_nodes, part.n_nodes):
        raise ValueError("coupling must be a square node-by-node matrix")
    if len(alpha_blocks) != part.n_nodes:
        raise ValueError("need one alpha block per node")

    a11 = []
    for g in range(part.n_groups):
        m_g = cmap.phi_blocks[g].shape[1]
        acc = np.zeros((m_g, m_g))
        row0 = 0
        for i in part.members(g):
            n_i = part.node_dims[i]
            alpha = np.asarray(alpha_blocks[i], dtype=np.float64)
            if alpha.shape != (n_i, n_i):
                raise ValueError(f"alpha block {i} has shape {alpha.shape}, expected ({n_i}, {n_i})")
            phi_ki = cmap.phi_blocks[g][row0 : row0 + n_i, :]
            plus_ik = _phi_plus_node_block(cmap, g, row0, n_i)
            acc += plus_ik @ alpha @ phi_ki
            row0 += n_i
        a11.append(acc)

    scales = _resolved_scales(cmap)
    b11 = np.zeros((part.n_groups, part.n_groups))
    members = [part.members(g) for g in range(part.n_groups)]
    for i in range(part.n_groups):
        for j in range(part.n_groups):
            block = coupling[np.ix_(members[i], members[j])]
            b11[i, j] = scales[i] * block.sum()
    return tuple(a11), b11


def _phi_plus_node_block(cmap: CoarseMap, group: int, row0: int, n_i: int) -> np.ndarray:
    phi = cmap.phi_blocks[group]
    gram = phi.T @ phi
    return np.linalg.solve(gram, phi[row0 : row0 + n_i, :].T)


def _resolved_scales(cmap: CoarseMap) -> np.ndarray:
    """Constant row value of each PhiPlus block; rejects non-averaging maps."""
    scales = []
    for g in range(cmap.partition.n_groups):
        phi = cmap.phi_blocks[g]
        if phi.shape[1] != 1:
            raise ValueError("scalar coarse interactions need one resolved dim per group")
        plus = np.linalg.solve(phi.T @ phi, phi.T)
        if not np.allclose(plus, plus.flat[0]):
            raise ValueError("coarse interactions are defined for constant averaging rows only")
        scales.append(plus.flat[0])
    return np.asarray(scales)


def coarse_graph(partition: Partition, fine_graph: Graph, b11: np.ndarray) -> Graph:
    """Coarse graph: edge (i, j) iff a fine edge crosses the group pair.

    Every group also gets a self-loop weighted by its self-interaction
    b11[i, i]; cross edges carry b11[i, j].  The topology index is
    inherited from the fine graph.
    """
    m = partition.n_groups
    b11 = np.asarray(b11, dtype=np.float64)
    if b11.shape != (m, m):
        raise ValueError(f"b11 must be {m}x{m}")
    group_of = partition.assignment
    connected: set[tuple[int, int]] = set()
    for (a, b) in fine_graph.edges:
        gi, gj = group_of[a], group_of[b]
        if gi != gj:
            connected.add((gi, gj))
    edges = [(i, i, float(b11[i, i])) for i in range(m)]
    edges += [(i, j, float(b11[i, j])) for (i, j) in sorted(connected)]
    return build_graph(m, edges, index=fine_graph.topology_index)


def solve_admittance_eta(y: np.ndarray, target_range: tuple[float, float]) -> float:
    """Rate eta such that the largest off-diagonal |Y| maps to the range floor."""
    lo, hi = target_range
    if not (0 < lo < hi <= 1):
        raise ValueError("target range must satisfy 0 < lo < hi <= 1")
    y = np.asarray(y)
    mags = np.abs(y[~np.eye(y.shape[0], dtype=bool)])
    mags = mags[mags > 0]
    if mags.size == 0:
        raise ValueError("no nonzero off-diagonal admittance entries")
    if np.isclose(mags.max(), mags.min()) and mags.size > 1:
        raise ValueError(
            "all off-diagonal |Y| are equal; a strict weight range is unattainable"
        )
    return float(-np.log(lo) / mags.max() ** 2)


def admittance_weights(
    y: np.ndarray,
    eta: float | None = None,
    target_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Edge weights w_ij = exp(-eta |Y_ij|^2), elementwise over the matrix.

    Either pass eta directly or a target range [lo, hi]; in the latter case
    eta is solved so off-diagonal weights span up from lo (see
    solve_admittance_eta).  Zero admittance maps to weight 1.
    """
    if eta is None:
        if target_range is None:
            raise ValueError("need eta or a target weight range")
        eta = solve_admittance_eta(y, target_range)
    if eta <= 0:
        raise ValueError("eta must be positive")
    return np.exp(-eta * np.abs(np.asarray(y)) ** 2)


def coarse_trajectory(traj: Trajectory, cmap: CoarseMap) -> Trajectory:
    """Project an angle trajectory to resolved coordinates sample by sample."""
    embedded = np.stack([embed_state(s) for s in traj.states])
    meta = dict(traj.meta)
    meta["kind"] = "coarse"
    return Trajectory(
        times=traj.times,
        states=observable(cmap, embedded),
        topo_indices=traj.topo_indices,
        meta=meta,
    )
