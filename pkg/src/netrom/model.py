"""Reduced-order model: per-node encoder, graph processor, per-node decoder.

The model consumes, per coarse node, a delay window of T resolved states
together with the T topology indices active over the window, and predicts
the rate of change of the resolved state.  The next state follows by an
explicit Euler step with the sampling interval.

Processor variants:

* ``chebconv`` - N_C spectral graph-convolution layers; layer j computes
  sigma(sum_s T_s(Lt) H Theta_s) with Chebyshev order S, so the stack has
  an S * N_C hop receptive field on the coarse graph.
* ``mlp`` - the topology-blind baseline: the same number of layers applied
  to the flattened all-nodes feature vector, letting every node interact
  with every other.  Its width is chosen to match the chebconv variant's
  trainable parameter count.

Topology enters twice: the encoder sees the index window (raw integer
values by default, optionally one-hot), and the processor uses the
spectral filter of the graph active at the prediction target step (or at
the current step, behind the `laplacian_timing` flag).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, Tensor, concat, matmul, matmul_const, prelu, reshape
from .graphs import Graph, SpectralFilter, weighted_laplacian
from .nn import fcnn, init_fcnn
from .rng import SplitMix64, child_seed

__all__ = [
    "RomConfig",
    "RomModel",
    "HistoryWindow",
    "hop_layout",
    "matched_mlp_width",
    "parameter_count",
    "build_model",
    "encode",
    "chebconv_layer",
    "process",
    "mlp_process",
    "decode",
    "forward_rate",
    "predict_step",
    "rollout",
    "RolloutError",
]


class RolloutError(RuntimeError):
    """Autoregressive prediction produced a non-finite state."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite prediction at rollout step {step}")


@dataclass(frozen=True)
class RomConfig:
    """Architecture hyperparameters; `features` is the node feature width D."""

    n_coarse: int
    delay: int
    cheb_order: int = 2
    n_layers: int = 1
    features: int = 128
    hidden: int = 128
    node_dim: int = 1
    dt: float = 0.01
    variant: str = "chebconv"
    laplacian_timing: str = "next"
    index_encoding: str = "raw"
    n_topologies: int = 1

    def __post_init__(self):
        if self.variant not in ("chebconv", "mlp"):
            raise ValueError(f"unknown variant '{self.variant}'")
        if self.laplacian_timing not in ("next", "current"):
            raise ValueError(f"unknown laplacian timing '{self.laplacian_timing}'")
        if self.index_encoding not in ("raw", "onehot"):
            raise ValueError(f"unknown index encoding '{self.index_encoding}'")
        if self.delay < 1 or self.cheb_order < 0 or self.n_layers < 1:
            raise ValueError("delay >= 1, cheb_order >= 0, n_layers >= 1 required")

    @property
    def hops(self) -> int:
        return self.cheb_order * self.n_layers

    @property
    def index_width(self) -> int:
        return 1 if self.index_encoding == "raw" else self.n_topologies

    @property
    def encoder_input_width(self) -> int:
        return self.delay * (self.node_dim + self.index_width)


def hop_layout(hops: int) -> tuple[int, int]:
    """(cheb_order S, n_layers N_C) realizing a hop budget: S*N_C = hops.

    1 hop -> (1, 1); even budgets use order-2 layers, odd budgets one
    order-`hops` layer.
    """
    if hops < 1:
        raise ValueError("hop budget must be positive")
    if hops == 1:
        return 1, 1
    if hops % 2 == 0:
        return 2, hops // 2
    return hops, 1


@dataclass
class HistoryWindow:
    """Delay window for one prediction: states (T, M), indices (T,), processor graph."""

    states: np.ndarray
    indices: np.ndarray
    next_graph: Graph

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.indices = np.asarray(self.indices)
        if len(self.states) != len(self.indices):
            raise ValueError("state and index windows must have equal length")


@dataclass
class RomModel:
    config: RomConfig
    params: dict[str, Tensor]
    filters: dict[int, SpectralFilter] = field(default_factory=dict)

    def attach_graphs(self, graphs) -> None:
        """Cache one spectral filter per distinct topology index."""
        for g in graphs:
            if g.topology_index not in self.filters:
                self.filters[g.topology_index] = weighted_laplacian(g)

    def transformed_laplacians(self) -> np.ndarray:
        """(n_topologies, M, M) stack indexed by topology index."""
        if not self.filters:
            raise ValueError("no graphs attached")
        n = max(self.filters) + 1
        m = self.config.n_coarse
        out = np.zeros((n, m, m))
        for j, f in self.filters.items():
            out[j] = f.transformed
        return out


def _mlp_parameter_count(cfg: RomConfig, width: int) -> int:
    enc = cfg.encoder_input_width * width + width + width * width + width + 1
    flat = cfg.n_coarse * width
    proc = cfg.n_layers * (flat * flat + flat + 1)
    dec = width * width + width + width * cfg.node_dim + cfg.node_dim + 1
    return enc + proc + dec


def parameter_count(cfg: RomConfig) -> int:
    """Trainable scalar count of the configured architecture."""
    if cfg.variant == "mlp":
        return _mlp_parameter_count(cfg, cfg.features)
    enc = cfg.encoder_input_width * cfg.hidden + cfg.hidden
    enc += cfg.hidden * cfg.features + cfg.features + 1
    proc = cfg.n_layers * ((cfg.cheb_order + 1) * cfg.features * cfg.features + 1)
    dec = cfg.features * cfg.hidden + cfg.hidden + cfg.hidden * cfg.node_dim + cfg.node_dim + 1
    return enc + proc + dec


def matched_mlp_width(cfg: RomConfig) -> int:
    """Width for the mlp variant that best matches the chebconv parameter count."""
    target = parameter_count(replace(cfg, variant="chebconv"))
    best, best_gap = 1, None
    for width in range(1, max(cfg.features, cfg.hidden) * 4 + 2):
        gap = abs(_mlp_parameter_count(cfg, width) - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = width, gap
    return best


def build_model(cfg: RomConfig, seed: int) -> RomModel:
    """Initialize all parameter tensors from a seed-derived stream.

    For the mlp variant, `features` and `hidden` are replaced by the
    parameter-matched width so the baseline stays size-comparable.
    """
    if cfg.variant == "mlp":
        width = matched_mlp_width(cfg)
        cfg = replace(cfg, features=width, hidden=width)
    rng = SplitMix64(child_seed(seed, 0))
    params: dict[str, Tensor] = {}
    params.update(init_fcnn(rng, [cfg.encoder_input_width, cfg.hidden, cfg.features], "enc"))
    if cfg.variant == "chebconv":
        bound = np.sqrt(1.0 / cfg.features)
        for j in range(cfg.n_layers):
            for s in range(cfg.cheb_order + 1):
                name = f"proc.l{j}.T{s}"
                w = rng.uniform_array(cfg.features * cfg.features, -bound, bound)
                params[name] = Tensor(
                    w.reshape(cfg.features, cfg.features), requires_grad=True, name=name
                )
            params[f"proc.l{j}.a"] = Tensor(0.25, requires_grad=True, name=f"proc.l{j}.a")
    else:
        flat = cfg.n_coarse * cfg.features
        bound = np.sqrt(1.0 / flat)
        for j in range(cfg.n_layers):
            w = rng.uniform_array(flat * flat, -bound, bound).reshape(flat, flat)
            b = rng.uniform_array(flat, -bound, bound)
            params[f"proc.l{j}.W"] = Tensor(w, requires_grad=True, name=f"proc.l{j}.W")
            params[f"proc.l{j}.b"] = Tensor(b, requires_grad=True, name=f"proc.l{j}.b")
            params[f"proc.l{j}.a"] = Tensor(0.25, requires_grad=True, name=f"proc.l{j}.a")
    params.update(init_fcnn(rng, [cfg.features, cfg.hidden, cfg.node_dim], "dec"))
    return RomModel(config=cfg, params=params)


def encoder_inputs(cfg: RomConfig, states: np.ndarray, jwin: np.ndarray) -> np.ndarray:
    """Per-node encoder input: the state window then the index window.

    states: (B, T, M); jwin: (B, T) integer indices.  Returns
    (B, M, T*(node_dim + index_width)); the index window is shared across
    nodes, fed raw by default or one-hot when configured.
    """
    b, t, m = states.shape
    if t != cfg.delay:
        raise ValueError(f"window length {t} != configured delay {cfg.delay}")
    per_node = np.swapaxes(states, 1, 2)
    if cfg.index_encoding == "raw":
        jfeat = jwin.astype(np.float64).reshape(b, 1, t)
    else:
        onehot = np.zeros((b, t, cfg.n_topologies))
        rows = np.repeat(np.arange(b), t)
        cols = np.tile(np.arange(t), b)
        onehot[rows, cols, jwin.astype(np.int64).reshape(-1)] = 1.0
        jfeat = onehot.reshape(b, 1, t * cfg.n_topologies)
    jfeat = np.broadcast_to(jfeat, (b, m, jfeat.shape[2]))
    return np.concatenate([per_node, jfeat], axis=2)


def encode(model: RomModel, states: np.ndarray, jwin: np.ndarray) -> Tensor:
    """H0 = f_E applied per node; rows with identical windows encode identically."""
    x = encoder_inputs(model.config, states, jwin)
    return fcnn(Tensor(x), model.params, "enc")


def chebconv_layer(h: Tensor, lt: np.ndarray, thetas: list[Tensor], slope: Tensor) -> Tensor:
    """sigma(sum_s T_s(Lt) H Theta_s) with the Chebyshev recurrence on features.

    `lt` is the constant transformed Laplacian, (M, M) shared or (B, M, M)
    per sample.
    """
    terms = [h]
    if len(thetas) > 1:
        terms.append(matmul_const(lt, h))
    for _ in range(2, len(thetas)):
        terms.append(matmul_const(lt, terms[-1]) * 2.0 - terms[-2])
    out = matmul(terms[0], thetas[0])
    for ts, theta in zip(terms[1:], thetas[1:]):
        out = out + matmul(ts, theta)
    return prelu(out, slope)


def process(model: RomModel, h0: Tensor, lt: np.ndarray) -> Tensor:
    """Stack of N_C ChebConv layers; receptive field S * N_C hops."""
    cfg = model.config
    h = h0
    for j in range(cfg.n_layers):
        thetas = [model.params[f"proc.l{j}.T{s}"] for s in range(cfg.cheb_order + 1)]
        h = chebconv_layer(h, lt, thetas, model.params[f"proc.l{j}.a"])
    return h


def mlp_process(model: RomModel, h0: Tensor) -> Tensor:
    """Baseline processor on the flattened all-nodes feature vector."""
    cfg = model.config
    b, m, d = h0.shape
    h = reshape(h0, (b, m * d))
    for j in range(cfg.n_layers):
        h = h @ model.params[f"proc.l{j}.W"] + model.params[f"proc.l{j}.b"]
        h = prelu(h, model.params[f"proc.l{j}.a"])
    return reshape(h, (b, m, d))


def decode(model: RomModel, h: Tensor) -> Tensor:
    """Per-node rate of change from the processed features: (B, M, node_dim)."""
    return fcnn(h, model.params, "dec")


def forward_rate(model: RomModel, states: np.ndarray, jwin: np.ndarray, lt: np.ndarray) -> Tensor:
    """F_G for a batch: encoder -> processor -> decoder, returning (B, M) rates."""
    h0 = encode(model, states, jwin)
    if model.config.variant == "chebconv":
        h = process(model, h0, lt)
    else:
        h = mlp_process(model, h0)
    rate = decode(model, h)
    b, m = rate.shape[0], rate.shape[1]
    if model.config.node_dim == 1:
        rate = reshape(rate, (b, m))
    return rate


def _filter_for(model: RomModel, topology_index: int) -> np.ndarray:
    try:
        return model.filters[topology_index].transformed
    except KeyError:
        raise KeyError(
            f"no spectral filter attached for topology {topology_index}"
        ) from None


def predict_step(model: RomModel, window: HistoryWindow) -> np.ndarray:
    """Next resolved state: x_t + dt * F_G(window)."""
    cfg = model.config
    if window.states.shape != (cfg.delay, cfg.n_coarse):
        raise ValueError(
            f"window shape {window.states.shape} != ({cfg.delay}, {cfg.n_coarse})"
        )
    lt = _filter_for(model, window.next_graph.topology_index)
    rate = forward_rate(
        model, window.states[None], window.indices[None].astype(np.float64), lt
    )
    return window.states[-1] + cfg.dt * rate.data[0]


def rollout(
    model: RomModel,
    seed_window: HistoryWindow,
    future_indices: np.ndarray,
    graphs: dict[int, Graph],
    steps: int | None = None,
) -> np.ndarray:
    """Autoregressive prediction of `steps` new samples.

    `future_indices[k]` is the topology index active at predicted sample
    k; the processor uses that step's graph under "next" timing, the
    current step's under "current".  Aborts with the failing step on
    non-finite output.
    """
    cfg = model.config
    future_indices = np.asarray(future_indices, dtype=np.int64)
    if steps is None:
        steps = len(future_indices)
    if steps > len(future_indices):
        raise ValueError("future_indices shorter than requested rollout")
    model.attach_graphs(graphs.values())

    states = seed_window.states.copy()
    indices = seed_window.indices.astype(np.int64).copy()
    out = np.empty((steps, cfg.n_coarse))
    for k in range(steps):
        j_proc = int(future_indices[k]) if cfg.laplacian_timing == "next" else int(indices[-1])
        window = HistoryWindow(states=states, indices=indices, next_graph=graphs[j_proc])
        nxt = predict_step(model, window)
        if not np.all(np.isfinite(nxt)):
            raise RolloutError(k)
        out[k] = nxt
        states = np.vstack([states[1:], nxt[None]])
        indices = np.append(indices[1:], future_indices[k])
    return out
