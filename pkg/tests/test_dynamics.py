import numpy as np
import pytest

from netrom.dynamics import (
    KuramotoSystem,
    Schedule,
    SimulationError,
    embed_state,
    generate_topology,
    generate_topology_pool,
    kuramoto_rhs,
    natural_frequencies,
    rk4_step,
    simulate,
)
from netrom.graphs import build_graph
from netrom.rng import SplitMix64


def pair_graph(kappa: float = 0.5):
    return build_graph(2, [(0, 1, kappa), (1, 0, kappa)])


def small_system(seed=0, n_groups=2, size=2, kappa=(4.0, 6.0)):
    g = generate_topology(n_groups, [size] * n_groups, kappa, seed=seed)
    omega = natural_frequencies(g.node_count, seed=seed + 1)
    return KuramotoSystem(omega=omega, graphs=(g,))


class TestKuramotoRhs:
    def test_zero_coupling_gives_omega(self):
        g = pair_graph()
        omega = np.array([1.0, 2.0])
        rate = kuramoto_rhs([0.3, 1.1], g, omega, kappa={(0, 1): 0.0, (1, 0): 0.0})
        np.testing.assert_array_equal(rate, omega)

    def test_two_node_hand_value(self):
        g = pair_graph(0.5)
        rate = kuramoto_rhs([0.0, np.pi / 2], g, [1.0, 2.0])
        np.testing.assert_allclose(rate, [1.5, 1.5])

    def test_synchronized_manifold(self):
        sys_ = small_system()
        theta = np.full(sys_.graphs[0].node_count, 0.7)
        rate = kuramoto_rhs(theta, sys_.graphs[0], sys_.omega)
        np.testing.assert_allclose(rate, sys_.omega, atol=1e-12)

    def test_missing_coupling_rejected(self):
        g = pair_graph()
        with pytest.raises(ValueError, match="missing coupling"):
            kuramoto_rhs([0.0, 0.0], g, [1.0, 1.0], kappa={(0, 1): 0.5})


class TestEmbedState:
    def test_angle_zero(self):
        np.testing.assert_allclose(embed_state([0.0]), [1.0, 0.0])

    def test_right_angle(self):
        np.testing.assert_allclose(embed_state([np.pi / 2]), [0.0, 1.0], atol=1e-15)

    def test_unit_circle(self):
        x = embed_state(SplitMix64(5).uniform_array(10, -10, 10))
        np.testing.assert_allclose(x[0::2] ** 2 + x[1::2] ** 2, 1.0, atol=1e-9)

    def test_derivative_matches_block_form(self):
        # d/dt of the embedding along a trajectory equals the (alpha, beta)
        # block dynamics: alpha_i = rotation by omega_i, beta_ij = kappa I.
        sys_ = small_system(seed=3)
        g = sys_.graphs[0]
        n = g.node_count
        sched = Schedule(segments=((0.0, 0),), total_time=0.2, dt=1e-3)
        traj = simulate(sys_, sched, SplitMix64(9).uniform_array(n, 0, 2 * np.pi))

        k = 50
        dt = sched.dt
        x_prev = embed_state(traj.states[k - 1])
        x_mid = embed_state(traj.states[k])
        x_next = embed_state(traj.states[k + 1])
        fd = (x_next - x_prev) / (2 * dt)

        kap = g.weight_matrix()
        rhs = np.zeros(2 * n)
        for i in range(n):
            c_i, s_i = x_mid[2 * i], x_mid[2 * i + 1]
            rhs[2 * i] += -sys_.omega[i] * s_i
            rhs[2 * i + 1] += sys_.omega[i] * c_i
            for j in g.neighbors(i) - {i}:
                c_j, s_j = x_mid[2 * j], x_mid[2 * j + 1]
                cross = s_j * c_i - c_j * s_i
                rhs[2 * i] += kap[j, i] * (-s_i * cross)
                rhs[2 * i + 1] += kap[j, i] * (c_i * cross)
        np.testing.assert_allclose(fd, rhs, atol=5e-4)


class TestRk4:
    def test_zero_rhs(self):
        state = np.array([1.0, -2.0])
        out = rk4_step(lambda s, t: np.zeros_like(s), state, 0.0, 0.1)
        np.testing.assert_array_equal(out, state)

    def test_exponential_accuracy(self):
        out = rk4_step(lambda s, t: s, np.array([1.0]), 0.0, 0.1)
        assert abs(out[0] - np.exp(0.1)) < 1e-7

    def test_linear_exact(self):
        out = rk4_step(lambda s, t: np.array([3.0]), np.array([1.0]), 0.0, 0.25)
        assert out[0] == 1.75

    def test_blowup_detected(self):
        with pytest.raises(SimulationError):
            rk4_step(lambda s, t: s * np.inf, np.array([1.0]), 0.0, 0.1)


class TestSimulate:
    def test_uncoupled_linear_phases(self):
        n = 4
        g = build_graph(n, [(0, 1, 1e-300), (1, 0, 1e-300)])  # weights unused
        omega = np.array([1.0, 2.0, -0.5, 0.0])
        sys_ = KuramotoSystem(omega=omega, graphs=(g.with_index(0),))
        init = np.array([0.1, 0.2, 0.3, 0.4])
        sched = Schedule(segments=((0.0, 0),), total_time=1.0, dt=0.01)
        traj = simulate(sys_, sched, init)
        want = init[None, :] + traj.times[:, None] * omega[None, :]
        np.testing.assert_allclose(traj.states, want, atol=1e-10)

    def test_nominal_sample_count(self):
        sys_ = small_system(seed=1, n_groups=5, size=4)
        sched = Schedule(segments=((0.0, 0),), total_time=10.0, dt=0.01)
        traj = simulate(sys_, sched, np.zeros(20))
        assert traj.n_samples == 1001
        np.testing.assert_allclose(np.diff(traj.times), 0.01, rtol=1e-12)

    def test_topology_switch_at_boundary(self):
        pool = generate_topology_pool(2, [2, 2], (4.0, 6.0), n_topologies=2, seed=5)
        sys_ = KuramotoSystem(omega=natural_frequencies(4, 0), graphs=pool)
        sched = Schedule(segments=((0.0, 0), (0.5, 1)), total_time=1.0, dt=0.01)
        traj = simulate(sys_, sched, np.zeros(4))
        assert traj.topo_indices[49] == 0
        assert traj.topo_indices[50] == 1
        assert traj.topo_indices[-1] == 1

    def test_segment_continuity_bitwise(self):
        pool = generate_topology_pool(2, [2, 2], (4.0, 6.0), n_topologies=2, seed=7)
        omega = natural_frequencies(4, 2)
        sys_ = KuramotoSystem(omega=omega, graphs=pool)
        init = SplitMix64(1).uniform_array(4, 0, 2 * np.pi)

        full = simulate(sys_, Schedule(((0.0, 0), (0.5, 1)), 1.0, 0.01), init)
        first = simulate(sys_, Schedule(((0.0, 0),), 0.5, 0.01), init)
        second = simulate(sys_, Schedule(((0.0, 1),), 0.5, 0.01), first.states[-1])
        np.testing.assert_array_equal(full.states[:51], first.states)
        np.testing.assert_array_equal(full.states[50:], second.states)

    def test_phase_shift_equivariance(self):
        sys_ = small_system(seed=11)
        n = sys_.graphs[0].node_count
        init = SplitMix64(4).uniform_array(n, 0, 2 * np.pi)
        sched = Schedule(((0.0, 0),), 1.0, 0.01)
        base = simulate(sys_, sched, init)
        shifted = simulate(sys_, sched, init + 1.234)
        np.testing.assert_allclose(shifted.states, base.states + 1.234, atol=1e-9)

    def test_seed_determinism(self):
        sys_ = small_system(seed=2)
        sched = Schedule(((0.0, 0),), 0.5, 0.01)
        init = SplitMix64(3).uniform_array(4, 0, 2 * np.pi)
        a = simulate(sys_, sched, init)
        b = simulate(sys_, sched, init)
        np.testing.assert_array_equal(a.states, b.states)


class TestGenerateTopology:
    def test_nominal_group_structure(self):
        g = generate_topology(5, [4] * 5, (4.0, 6.0), seed=42)
        assert g.node_count == 20
        w = g.weight_matrix()
        np.testing.assert_allclose(w, w.T)
        # intra-group blocks fully connected: 6 undirected edges per group of 4
        for grp in range(5):
            nodes = range(4 * grp, 4 * grp + 4)
            for a in nodes:
                for b in nodes:
                    if a != b:
                        assert w[a, b] > 0
        assert all(4.0 <= wt <= 6.0 for wt in g.weights)

    def test_determinism(self):
        a = generate_topology(5, [4] * 5, (4.0, 6.0), seed=9)
        b = generate_topology(5, [4] * 5, (4.0, 6.0), seed=9)
        assert a.edges == b.edges
        assert a.weights == b.weights

    def test_inter_group_degree_at_most_two(self):
        for seed in range(20):
            g = generate_topology(5, [4] * 5, (4.0, 6.0), seed=seed)
            w = g.weight_matrix()
            partners = [set() for _ in range(5)]
            for a in range(20):
                for b in range(20):
                    if w[a, b] > 0 and a // 4 != b // 4:
                        partners[a // 4].add(b // 4)
            assert all(len(p) <= 2 for p in partners)

    def test_one_edge_per_group_pair(self):
        g = generate_topology(5, [4] * 5, (4.0, 6.0), seed=13)
        w = g.weight_matrix()
        for gi in range(5):
            for gj in range(gi + 1, 5):
                block = w[4 * gi : 4 * gi + 4, 4 * gj : 4 * gj + 4]
                assert np.count_nonzero(block) <= 1

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            generate_topology(2, [2, 2], (6.0, 4.0), seed=0)
        with pytest.raises(ValueError):
            generate_topology(2, [2, 2], (0.0, 4.0), seed=0)

    def test_pool_shares_intra_structure(self):
        pool = generate_topology_pool(3, [3, 3, 3], (1.0, 2.0), n_topologies=3, seed=21)
        assert [g.topology_index for g in pool] == [0, 1, 2]
        mats = [g.weight_matrix() for g in pool]
        for grp in range(3):
            sl = slice(3 * grp, 3 * grp + 3)
            np.testing.assert_array_equal(mats[0][sl, sl], mats[1][sl, sl])
            np.testing.assert_array_equal(mats[0][sl, sl], mats[2][sl, sl])


class TestNaturalFrequencies:
    def test_bounds(self):
        w = natural_frequencies(1000, seed=0)
        assert w.min() >= 1.0 and w.max() <= 15.0

    def test_determinism(self):
        np.testing.assert_array_equal(natural_frequencies(10, 3), natural_frequencies(10, 3))

    def test_mean_converges(self):
        w = natural_frequencies(100_000, seed=17)
        assert abs(w.mean() - 8.0) < 0.1
