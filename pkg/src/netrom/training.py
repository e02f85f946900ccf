"""Dataset windowing, training loop, rollout evaluation, and parametric studies.

A supervised sample at step t pairs the delay window (resolved states and
topology indices over t-T+1..t) with the target rate
(xbar_{t+1} - xbar_t) / dt; windows never cross trajectory boundaries, and
for a trajectory of N_t samples the valid t range is [T, N_t - 2], giving
N_t - 1 - T samples.

Training is mini-batch Adam with per-epoch exponential learning-rate decay
and seed-deterministic shuffling.  Evaluation rolls the model out
autoregressively from the first T true samples and scores the prediction
with the range-normalized RMSE averaged over nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, Tensor, square
from .coarsen import (
    build_partition,
    coarse_coefficients,
    coarse_graph,
    coarse_trajectory,
    kuramoto_averaging_basis,
)
from .dynamics import (
    KuramotoSystem,
    Schedule,
    Trajectory,
    generate_topology_pool,
    natural_frequencies,
    simulate,
)
from .graphs import Graph
from .model import HistoryWindow, RomConfig, RomModel, build_model, forward_rate, hop_layout, rollout
from .nn import AdamState, adam_step, lr_schedule
from .rng import SplitMix64, child_seed

__all__ = [
    "Dataset",
    "TrainConfig",
    "TrainingDiverged",
    "EvalReport",
    "build_dataset",
    "loss",
    "train",
    "nrmse",
    "evaluate",
    "ExperimentConfig",
    "Experiment",
    "generate_experiment",
    "StudyCell",
    "run_study",
    "KAPPA_BY_DEPS",
]

# coupling ranges realizing the benchmark interaction-strength cases
KAPPA_BY_DEPS = {0.75: (4.0, 6.0), 0.5: (2.0, 3.0), 0.19: (1.0, 1.5)}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


@dataclass
class Dataset:
    """Windowed supervised samples; rows carry their source trajectory id."""

    states: np.ndarray  # (Ns, T, M) windows, time ascending
    jwin: np.ndarray  # (Ns, T) topology indices over the window
    targets: np.ndarray  # (Ns, M) rates
    proc_index: np.ndarray  # (Ns,) processor topology index
    traj_ids: np.ndarray  # (Ns,)
    delay: int
    dt: float

    @property
    def n_samples(self) -> int:
        return len(self.targets)

    def subset(self, ids) -> "Dataset":
        mask = np.isin(self.traj_ids, np.asarray(list(ids)))
        return Dataset(
            self.states[mask],
            self.jwin[mask],
            self.targets[mask],
            self.proc_index[mask],
            self.traj_ids[mask],
            self.delay,
            self.dt,
        )


def build_dataset(
    trajectories: list[Trajectory],
    delay: int,
    laplacian_timing: str = "next",
    traj_ids: list[int] | None = None,
) -> Dataset:
    """Window a list of coarse trajectories into supervised samples."""
    if traj_ids is None:
        traj_ids = list(range(len(trajectories)))
    states_l, jwin_l, targets_l, proc_l, ids_l = [], [], [], [], []
    for tid, traj in zip(traj_ids, trajectories):
        n_t = traj.n_samples
        if n_t < delay + 1:
            raise ValueError(
                f"trajectory {tid} has {n_t} samples, too short for delay {delay}"
            )
        dt = traj.dt
        x = traj.states
        j = traj.topo_indices
        for t in range(delay, n_t - 1):
            states_l.append(x[t - delay + 1 : t + 1])
            jwin_l.append(j[t - delay + 1 : t + 1])
            targets_l.append((x[t + 1] - x[t]) / dt)
            proc_l.append(j[t + 1] if laplacian_timing == "next" else j[t])
            ids_l.append(tid)
    m = trajectories[0].states.shape[1] if trajectories else 0
    return Dataset(
        states=np.stack(states_l) if states_l else np.zeros((0, delay, m)),
        jwin=np.stack(jwin_l) if jwin_l else np.zeros((0, delay), dtype=np.int64),
        targets=np.stack(targets_l) if targets_l else np.zeros((0, m)),
        proc_index=np.asarray(proc_l, dtype=np.int64),
        traj_ids=np.asarray(ids_l, dtype=np.int64),
        delay=delay,
        dt=trajectories[0].dt if trajectories else float("nan"),
    )


def _batch_laplacians(model: RomModel, proc_index: np.ndarray) -> np.ndarray:
    unique = np.unique(proc_index)
    if len(unique) == 1:
        return model.filters[int(unique[0])].transformed
    return model.transformed_laplacians()[proc_index]


def loss(model: RomModel, dataset: Dataset, idx: np.ndarray | None = None) -> Tensor:
    """Mean squared error of the predicted rates over the selected samples."""
    if idx is None:
        idx = np.arange(dataset.n_samples)
    if len(idx) == 0:
        raise ValueError("empty batch")
    lt = _batch_laplacians(model, dataset.proc_index[idx])
    pred = forward_rate(model, dataset.states[idx], dataset.jwin[idx], lt)
    return square(pred - Tensor(dataset.targets[idx])).mean()


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr0: float = 1e-3
    decay: float = 0.99
    seed: int = 0


def train(model: RomModel, dataset: Dataset, cfg: TrainConfig) -> list[float]:
    """Mini-batch Adam; returns the per-epoch mean training loss."""
    if dataset.n_samples == 0:
        raise ValueError("dataset is empty")
    state = AdamState()
    rng = SplitMix64(child_seed(cfg.seed, 0))
    history: list[float] = []
    n = dataset.n_samples
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr0, cfg.decay)
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            with Tape() as tape:
                batch_loss = loss(model, dataset, idx)
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            tape.backward(batch_loss)
            if cfg.lr0 > 0.0:
                adam_step(model.params, state, lr)
            else:
                for p in model.params.values():
                    p.grad = None
            total += value * len(idx)
        history.append(total / n)
    return history


def nrmse(pred: np.ndarray, truth: np.ndarray, skip_zero_range: bool = False) -> float:
    """Per-node range-normalized RMSE, averaged over nodes.

    The normalizer is the min-max range of the true trajectory per node; a
    zero range raises unless `skip_zero_range`, in which case the node is
    dropped from the average.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    rmse = np.sqrt(np.mean((pred - truth) ** 2, axis=0))
    ranges = truth.max(axis=0) - truth.min(axis=0)
    if np.any(ranges == 0.0):
        if not skip_zero_range:
            bad = int(np.nonzero(ranges == 0.0)[0][0])
            raise ValueError(f"truth range is zero on node {bad}")
        keep = ranges > 0.0
        rmse, ranges = rmse[keep], ranges[keep]
        if rmse.size == 0:
            raise ValueError("all nodes have zero truth range")
    return float(np.mean(rmse / ranges))


@dataclass(frozen=True)
class EvalReport:
    per_trajectory: tuple[float, ...]
    mean: float
    std: float
    config: dict

    @staticmethod
    def from_scores(scores: list[float], config: dict) -> "EvalReport":
        arr = np.asarray(scores, dtype=np.float64)
        return EvalReport(tuple(arr), float(arr.mean()), float(arr.std()), dict(config))


def evaluate(
    model: RomModel,
    trajectories: list[Trajectory],
    graphs: dict[int, Graph],
) -> EvalReport:
    """Rollout NRMSE per trajectory: seed with the first T true samples."""
    delay = model.config.delay
    scores = []
    for traj in trajectories:
        window = HistoryWindow(
            states=traj.states[:delay],
            indices=traj.topo_indices[:delay],
            next_graph=graphs[int(traj.topo_indices[delay])],
        )
        pred = rollout(model, window, traj.topo_indices[delay:], graphs)
        scores.append(nrmse(pred, traj.states[delay:]))
    cfg = model.config
    return EvalReport.from_scores(
        scores,
        {
            "variant": cfg.variant,
            "delay": cfg.delay,
            "hops": cfg.hops,
            "n_trajectories": len(trajectories),
        },
    )


# -- benchmark experiment generation --------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Grouped Kuramoto benchmark: simulation plus coarse-graining settings."""

    n_groups: int = 5
    group_size: int = 4
    kappa: tuple[float, float] = (4.0, 6.0)
    omega: tuple[float, float] = (1.0, 15.0)
    dt: float = 0.01
    horizon: float = 5.0
    n_train: int = 20
    n_test: int = 5
    n_topologies: int = 1
    n_switches: int = 0
    seed: int = 0

    @property
    def n_nodes(self) -> int:
        return self.n_groups * self.group_size


@dataclass
class Experiment:
    """Everything one benchmark run needs, with a structurally disjoint split."""

    config: ExperimentConfig
    system: KuramotoSystem
    cmap: object
    coarse_graphs: dict[int, Graph]
    train: list[Trajectory]
    test: list[Trajectory]
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    fine: list[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test trajectory ids overlap")


def _trajectory_schedule(cfg: ExperimentConfig, rng: SplitMix64) -> Schedule:
    n_steps = int(round(cfg.horizon / cfg.dt))
    start_j = rng.randint(cfg.n_topologies) if cfg.n_topologies > 1 else 0
    segments = [(0.0, start_j)]
    if cfg.n_switches > 0 and cfg.n_topologies > 1:
        switch_steps = sorted(set(1 + rng.randint(n_steps - 1) for _ in range(cfg.n_switches)))
        current = start_j
        for step in switch_steps:
            nxt = rng.randint(cfg.n_topologies - 1)
            if nxt >= current:
                nxt += 1  # switch always lands on a different topology
            segments.append((step * cfg.dt, nxt))
            current = nxt
    return Schedule(tuple(segments), cfg.horizon, cfg.dt)


def generate_experiment(cfg: ExperimentConfig, keep_fine: bool = False) -> Experiment:
    """Simulate, coarse-grain, and split a full benchmark dataset.

    Seed layout: stream 0 drives the topology pool, stream 1 the natural
    frequencies, and streams (2 + 2i, 3 + 2i) the initial condition and
    switching schedule of trajectory i.
    """
    pool = generate_topology_pool(
        cfg.n_groups,
        [cfg.group_size] * cfg.n_groups,
        cfg.kappa,
        cfg.n_topologies,
        child_seed(cfg.seed, 0),
    )
    omega = natural_frequencies(cfg.n_nodes, child_seed(cfg.seed, 1), *cfg.omega)
    system = KuramotoSystem(omega=omega, graphs=pool)

    partition = build_partition(
        [2] * cfg.n_nodes, [i // cfg.group_size for i in range(cfg.n_nodes)]
    )
    cmap = kuramoto_averaging_basis(partition)
    alphas = [np.array([[0.0, -w], [w, 0.0]]) for w in omega]
    coarse_graphs: dict[int, Graph] = {}
    for g in pool:
        _, b11 = coarse_coefficients(cmap, alphas, g.weight_matrix())
        coarse_graphs[g.topology_index] = coarse_graph(partition, g, b11)

    n_total = cfg.n_train + cfg.n_test
    coarse_all: list[Trajectory] = []
    fine_all: list[Trajectory] = []
    for i in range(n_total):
        init = SplitMix64(child_seed(cfg.seed, 2 + 2 * i)).uniform_array(
            cfg.n_nodes, 0.0, 2.0 * np.pi
        )
        sched = _trajectory_schedule(cfg, SplitMix64(child_seed(cfg.seed, 3 + 2 * i)))
        fine = simulate(system, sched, init, seed=cfg.seed)
        coarse_all.append(coarse_trajectory(fine, cmap))
        if keep_fine:
            fine_all.append(fine)

    train_ids = tuple(range(cfg.n_train))
    test_ids = tuple(range(cfg.n_train, n_total))
    return Experiment(
        config=cfg,
        system=system,
        cmap=cmap,
        coarse_graphs=coarse_graphs,
        train=[coarse_all[i] for i in train_ids],
        test=[coarse_all[i] for i in test_ids],
        train_ids=train_ids,
        test_ids=test_ids,
        fine=fine_all,
    )


def rom_config_for(experiment: Experiment, hops: int, delay: int, **overrides) -> RomConfig:
    order, layers = hop_layout(hops)
    kwargs = dict(
        n_coarse=experiment.config.n_groups,
        delay=delay,
        cheb_order=order,
        n_layers=layers,
        dt=experiment.config.dt,
        n_topologies=experiment.config.n_topologies,
    )
    kwargs.update(overrides)
    return RomConfig(**kwargs)


# -- parametric study ------------------------------------------------------


@dataclass(frozen=True)
class StudyCell:
    hops: int
    delay: int
    d_eps: float
    seed: int


def run_study(
    hops_values: list[int],
    delay_values: list[int],
    d_eps_values: list[float],
    seeds: list[int],
    experiment_base: ExperimentConfig | None = None,
    train_cfg: TrainConfig | None = None,
    model_overrides: dict | None = None,
) -> list[dict]:
    """Grid of (hops, delay, d_eps) x seeds; one row per trained model.

    Every cell simulates its own data (topology seed = cell seed), trains a
    chebconv model, and records the mean test NRMSE.  Failures are recorded
    in the row, not raised.
    """
    base = experiment_base or ExperimentConfig()
    tcfg = train_cfg or TrainConfig()
    overrides = model_overrides or {}
    rows: list[dict] = []
    for d_eps in d_eps_values:
        kappa = KAPPA_BY_DEPS.get(d_eps, base.kappa)
        for seed in seeds:
            exp = generate_experiment(replace(base, kappa=kappa, seed=seed))
            for hops in hops_values:
                for delay in delay_values:
                    row = {"hops": hops, "T": delay, "d_eps": d_eps, "seed": seed}
                    try:
                        cfg = rom_config_for(exp, hops, delay, **overrides)
                        model = build_model(cfg, seed=child_seed(seed, 77))
                        model.attach_graphs(exp.coarse_graphs.values())
                        dataset = build_dataset(
                            exp.train, delay, cfg.laplacian_timing, list(exp.train_ids)
                        )
                        train(model, dataset, replace(tcfg, seed=seed))
                        report = evaluate(model, exp.test, exp.coarse_graphs)
                        row["nrmse"] = report.mean
                    except Exception as err:  # cell failures are data, not crashes
                        row["nrmse"] = float("nan")
                        row["error"] = f"{type(err).__name__}: {err}"
                    rows.append(row)
    return rows
