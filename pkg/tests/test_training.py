import numpy as np
import pytest

from netrom.dynamics import Trajectory
from netrom.model import RomConfig, build_model, forward_rate
from netrom.training import (
    ExperimentConfig,
    TrainConfig,
    TrainingDiverged,
    build_dataset,
    evaluate,
    generate_experiment,
    loss,
    nrmse,
    rom_config_for,
    run_study,
    train,
)


def synthetic_trajectory(n_samples=60, n_nodes=3, dt=0.01, seed=0, indices=None):
    rng = np.linspace(0, 1, n_samples)
    states = np.stack(
        [np.sin(2 * np.pi * rng * (k + 1) + seed) for k in range(n_nodes)], axis=1
    )
    if indices is None:
        indices = np.zeros(n_samples, dtype=np.int64)
    return Trajectory(
        times=np.arange(n_samples) * dt,
        states=states,
        topo_indices=np.asarray(indices),
        meta={"seed": seed, "dt": dt, "kind": "coarse"},
    )


def tiny_experiment(**overrides):
    kwargs = dict(
        n_groups=2, group_size=2, kappa=(4.0, 6.0), dt=0.01,
        horizon=0.6, n_train=2, n_test=1, seed=3,
    )
    kwargs.update(overrides)
    return generate_experiment(ExperimentConfig(**kwargs))


class TestBuildDataset:
    def test_sample_count_nominal(self):
        traj = synthetic_trajectory(n_samples=1001)
        ds = build_dataset([traj], delay=50)
        assert ds.n_samples == 950

    def test_boundary_gives_zero_samples(self):
        traj = synthetic_trajectory(n_samples=60)
        ds = build_dataset([traj], delay=59)
        assert ds.n_samples == 0

    def test_too_short_rejected(self):
        traj = synthetic_trajectory(n_samples=10)
        with pytest.raises(ValueError, match="samples"):
            build_dataset([traj], delay=10)

    def test_constant_trajectory_zero_targets(self):
        traj = synthetic_trajectory(n_samples=30)
        traj = Trajectory(traj.times, np.ones_like(traj.states), traj.topo_indices, traj.meta)
        ds = build_dataset([traj], delay=5)
        np.testing.assert_array_equal(ds.targets, 0.0)

    def test_target_is_forward_difference_rate(self):
        traj = synthetic_trajectory(n_samples=30)
        ds = build_dataset([traj], delay=5)
        t = 5
        want = (traj.states[t + 1] - traj.states[t]) / traj.dt
        np.testing.assert_allclose(ds.targets[0], want)
        np.testing.assert_allclose(ds.states[0], traj.states[1 : t + 1])

    def test_windows_match_recorded_indices(self):
        indices = np.array([0] * 20 + [1] * 20, dtype=np.int64)
        traj = synthetic_trajectory(n_samples=40, indices=indices)
        ds = build_dataset([traj], delay=6)
        for row in range(ds.n_samples):
            t = 6 + row
            np.testing.assert_array_equal(ds.jwin[row], indices[t - 5 : t + 1])
            assert ds.proc_index[row] == indices[t + 1]
        ds_cur = build_dataset([traj], delay=6, laplacian_timing="current")
        np.testing.assert_array_equal(ds_cur.proc_index, indices[6:-1])

    def test_no_window_crosses_trajectories(self):
        t1 = synthetic_trajectory(n_samples=30, seed=1)
        t2 = synthetic_trajectory(n_samples=30, seed=2)
        ds = build_dataset([t1, t2], delay=5)
        assert ds.n_samples == 2 * 24
        assert set(np.unique(ds.traj_ids)) == {0, 1}
        sub = ds.subset([1])
        assert sub.n_samples == 24
        np.testing.assert_allclose(sub.states[0], t2.states[1:6])


class TestLoss:
    def make_model_and_data(self):
        exp = tiny_experiment()
        cfg = rom_config_for(exp, hops=2, delay=5, features=8, hidden=8)
        model = build_model(cfg, seed=1)
        model.attach_graphs(exp.coarse_graphs.values())
        ds = build_dataset(exp.train, 5, traj_ids=list(exp.train_ids))
        return model, ds

    def test_zero_model_zero_targets(self):
        model, ds = self.make_model_and_data()
        for name in ("dec.W1", "dec.b1"):
            model.params[name].data[...] = 0.0
        zeroed = Dataset_with_zero_targets(ds)
        assert float(loss(model, zeroed).data) == 0.0

    def test_single_sample_hand_value(self):
        model, ds = self.make_model_and_data()
        idx = np.array([3])
        lt = model.filters[int(ds.proc_index[3])].transformed
        pred = forward_rate(model, ds.states[idx], ds.jwin[idx], lt).data[0]
        want = float(np.mean((pred - ds.targets[3]) ** 2))
        assert float(loss(model, ds, idx).data) == pytest.approx(want, rel=1e-12)

    def test_empty_batch_rejected(self):
        model, ds = self.make_model_and_data()
        with pytest.raises(ValueError, match="empty"):
            loss(model, ds, np.array([], dtype=np.int64))


def Dataset_with_zero_targets(ds):
    from dataclasses import replace

    return replace(ds, targets=np.zeros_like(ds.targets))


class TestTrain:
    def test_zero_lr_keeps_parameters(self):
        exp = tiny_experiment()
        cfg = rom_config_for(exp, hops=1, delay=4, features=6, hidden=6)
        model = build_model(cfg, seed=5)
        model.attach_graphs(exp.coarse_graphs.values())
        ds = build_dataset(exp.train, 4, traj_ids=list(exp.train_ids))
        before = {k: p.data.copy() for k, p in model.params.items()}
        train(model, ds, TrainConfig(epochs=2, batch_size=16, lr0=0.0, seed=1))
        for k, p in model.params.items():
            np.testing.assert_array_equal(p.data, before[k])

    def test_seeded_rerun_identical_history(self):
        def run():
            exp = tiny_experiment()
            cfg = rom_config_for(exp, hops=2, delay=4, features=6, hidden=6)
            model = build_model(cfg, seed=9)
            model.attach_graphs(exp.coarse_graphs.values())
            ds = build_dataset(exp.train, 4, traj_ids=list(exp.train_ids))
            hist = train(model, ds, TrainConfig(epochs=3, batch_size=16, lr0=1e-3, seed=2))
            return hist, {k: p.data.copy() for k, p in model.params.items()}

        hist_a, params_a = run()
        hist_b, params_b = run()
        assert hist_a == hist_b
        for k in params_a:
            np.testing.assert_array_equal(params_a[k], params_b[k])

    def test_overfits_tiny_dataset(self):
        exp = tiny_experiment()
        cfg = rom_config_for(exp, hops=2, delay=4, features=32, hidden=32)
        model = build_model(cfg, seed=4)
        model.attach_graphs(exp.coarse_graphs.values())
        ds = build_dataset(exp.train, 4, traj_ids=list(exp.train_ids))
        idx = np.arange(10)
        small = Dataset_slice(ds, idx)
        hist = train(model, small, TrainConfig(epochs=500, batch_size=10, lr0=3e-2, decay=0.995, seed=3))
        assert hist[-1] < 1e-4

    def test_divergence_aborts_with_epoch(self):
        exp = tiny_experiment()
        cfg = rom_config_for(exp, hops=1, delay=4, features=6, hidden=6)
        model = build_model(cfg, seed=6)
        model.attach_graphs(exp.coarse_graphs.values())
        ds = build_dataset(exp.train, 4, traj_ids=list(exp.train_ids))
        with pytest.raises(TrainingDiverged) as err:
            train(model, ds, TrainConfig(epochs=50, batch_size=16, lr0=1e160, seed=4))
        assert err.value.epoch >= 0


def Dataset_slice(ds, idx):
    from dataclasses import replace

    return replace(
        ds,
        states=ds.states[idx],
        jwin=ds.jwin[idx],
        targets=ds.targets[idx],
        proc_index=ds.proc_index[idx],
        traj_ids=ds.traj_ids[idx],
    )


class TestNrmse:
    def test_perfect_prediction(self):
        truth = np.random.default_rng(0).normal(size=(50, 4))
        assert nrmse(truth, truth) == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        truth = rng.normal(size=(100, 3))
        c = 0.37
        ranges = truth.max(axis=0) - truth.min(axis=0)
        want = float(np.mean(c / ranges))
        assert nrmse(truth + c, truth) == pytest.approx(want, rel=1e-12)

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(2)
        truth = rng.normal(size=(40, 5))
        pred = truth + rng.normal(scale=0.1, size=truth.shape)
        perm = rng.permutation(5)
        assert nrmse(pred, truth) == pytest.approx(nrmse(pred[:, perm], truth[:, perm]))

    def test_zero_range_reported_or_skipped(self):
        truth = np.ones((10, 2))
        truth[:, 1] = np.linspace(0, 1, 10)
        pred = truth + 0.1
        with pytest.raises(ValueError, match="node 0"):
            nrmse(pred, truth)
        assert nrmse(pred, truth, skip_zero_range=True) == pytest.approx(0.1)


class TestExperiment:
    def test_determinism(self):
        a = tiny_experiment()
        b = tiny_experiment()
        np.testing.assert_array_equal(a.train[0].states, b.train[0].states)
        np.testing.assert_array_equal(a.test[0].states, b.test[0].states)

    def test_split_disjoint(self):
        exp = tiny_experiment()
        assert not (set(exp.train_ids) & set(exp.test_ids))
        assert len(exp.train) == 2 and len(exp.test) == 1

    def test_time_varying_switches(self):
        exp = tiny_experiment(n_topologies=3, n_switches=2, horizon=1.0)
        assert set(exp.coarse_graphs) == {0, 1, 2}
        changes = sum(
            int(a != b)
            for t in exp.train + exp.test
            for a, b in zip(t.topo_indices, t.topo_indices[1:])
        )
        assert changes >= 1

    def test_coarse_graph_shapes(self):
        exp = tiny_experiment()
        g = exp.coarse_graphs[0]
        assert g.node_count == 2
        w = g.weight_matrix()
        assert w[0, 0] > 0 and w[1, 1] > 0


class TestEvaluate:
    def test_report_consistency(self):
        exp = tiny_experiment(n_test=2)
        cfg = rom_config_for(exp, hops=2, delay=5, features=8, hidden=8)
        model = build_model(cfg, seed=2)
        model.attach_graphs(exp.coarse_graphs.values())
        report = evaluate(model, exp.test, exp.coarse_graphs)
        assert len(report.per_trajectory) == 2
        assert report.mean == pytest.approx(float(np.mean(report.per_trajectory)))
        assert report.std == pytest.approx(float(np.std(report.per_trajectory)))


class TestRunStudy:
    def test_single_cell(self):
        base = ExperimentConfig(
            n_groups=2, group_size=2, dt=0.01, horizon=0.4, n_train=1, n_test=1
        )
        rows = run_study(
            hops_values=[1],
            delay_values=[4],
            d_eps_values=[0.75],
            seeds=[5],
            experiment_base=base,
            train_cfg=TrainConfig(epochs=1, batch_size=8, lr0=1e-3),
            model_overrides={"features": 6, "hidden": 6},
        )
        assert len(rows) == 1
        row = rows[0]
        assert row["hops"] == 1 and row["T"] == 4 and row["seed"] == 5
        assert np.isfinite(row["nrmse"])

    def test_failed_cell_recorded(self):
        base = ExperimentConfig(
            n_groups=2, group_size=2, dt=0.01, horizon=0.06, n_train=1, n_test=1
        )
        rows = run_study(
            hops_values=[1], delay_values=[50], d_eps_values=[0.75], seeds=[1],
            experiment_base=base,
            train_cfg=TrainConfig(epochs=1, batch_size=8),
            model_overrides={"features": 6, "hidden": 6},
        )
        assert len(rows) == 1
        assert np.isnan(rows[0]["nrmse"])
        assert "error" in rows[0]
