import numpy as np
import pytest

from dcmpc import (
    ControlInput,
    PreconditionError,
    ScenarioSet,
    SystemState,
    UsageError,
    VariableLayout,
    WindowData,
    build_deterministic,
    build_penalized,
    build_scenario,
    decode,
    simulate,
)
from dcmpc.program import EnergyBlock, PosynomialBlock

from conftest import fd_grad, make_params


def random_window(rng, n_clusters=1, t_h=2, w_tc=0.0, w_m=0.0, params=None):
    params = params if params is not None else make_params(n_clusters=n_clusters)
    loads = rng.uniform(0.0, 15.0, (n_clusters, t_h + 1))
    init = SystemState(0, rng.uniform(15.0, 60.0, n_clusters))
    return WindowData(0, loads, init, params, w_tc=w_tc, w_m=w_m)


def random_logspace_point(rng, prog, scale=1.5):
    """Random point with x inside its box (where the cooling curve is convex)."""
    w = rng.normal(0, scale, prog.n_vars)
    ids = prog.layout.x_ids()
    w[ids] = rng.uniform(prog.lower[ids], prog.upper[ids])
    return w


def feasible_log_point(rng, data):
    """Random strictly feasible point of the transformed program (by rejection)."""
    layout = data.layout()
    prog = build_deterministic(data)
    for _ in range(500):
        w = np.empty(layout.n_vars)
        w[layout.x_ids()] = rng.uniform(prog.lower[layout.x_ids()], prog.upper[layout.x_ids()])
        for j in range(layout.n_clusters):
            ids = layout.y_ids(j)
            w[ids] = prog.lower[ids] + rng.uniform(0.05, 2.0, ids.size)
        w[layout.gamma_id] = 0.0
        g = prog.constraint_values(w)[:-1]  # energy row excluded; gamma chosen after
        if np.all(g <= -1e-6):
            u, _ = decode(w, layout)
            log = simulate(u, data.loads, data.init, data.params)
            w[layout.gamma_id] = np.log(log.total_energy()) + rng.uniform(0.01, 1.0)
            return w
    raise AssertionError("could not sample a feasible point")


class TestVariableLayout:
    def test_counts_and_contiguity(self):
        layout = VariableLayout(tau=7, t_h=3, n_clusters=2)
        ids = [layout.x_id(t) for t in range(7, 11)]
        for j in range(2):
            ids += [layout.y_id(j, t) for t in range(7, 11)]
        ids.append(layout.gamma_id)
        assert sorted(ids) == list(range(layout.n_vars))
        assert layout.n_vars == 4 * 3 + 1

    def test_out_of_window_rejected(self):
        layout = VariableLayout(tau=0, t_h=1, n_clusters=1)
        with pytest.raises(UsageError):
            layout.x_id(2)
        with pytest.raises(UsageError):
            layout.y_id(1, 0)


class TestBuildDeterministic:
    def test_smallest_instance_counts(self, params):
        data = WindowData(0, np.array([[1.0]]), SystemState(0, [27.0]), params)
        prog = build_deterministic(data)
        assert prog.n_vars == 3
        temp, energy = prog.blocks
        assert temp.n_rows == 1
        assert energy.n_rows == 1
        ylb = prog.lower[prog.layout.y_id(0, 0)]
        assert ylb == pytest.approx(np.log(1 / 0.05 + 1.0))  # log 21
        assert prog.lower[0] == pytest.approx(np.log(18.0))
        assert prog.upper[0] == pytest.approx(np.log(27.0))

    def test_convexity_floor_enforced(self):
        params = make_params(tc_min=10.0)
        data = WindowData(0, np.array([[1.0]]), SystemState(0, [27.0]), params)
        with pytest.raises(PreconditionError):
            build_deterministic(data)

    def test_objective_is_gamma(self, params):
        rng = np.random.default_rng(0)
        data = random_window(rng)
        prog = build_deterministic(data)
        for _ in range(10):
            w = rng.normal(0, 2, prog.n_vars)
            val, grad = prog.objective.value_and_grad(w)
            assert val == pytest.approx(w[prog.layout.gamma_id], rel=1e-12)
            expected = np.zeros(prog.n_vars)
            expected[prog.layout.gamma_id] = 1.0
            np.testing.assert_allclose(grad, expected, atol=1e-12)

    def test_midpoint_convexity_all_constraints(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            data = random_window(rng, n_clusters=rng.integers(1, 3), t_h=rng.integers(0, 4))
            prog = build_deterministic(data)
            rows = list(prog.iter_constraints())
            for _ in range(100):
                w1 = random_logspace_point(rng, prog)
                w2 = random_logspace_point(rng, prog)
                for row in rows:
                    mid = row.value((w1 + w2) / 2)
                    assert mid <= 0.5 * (row.value(w1) + row.value(w2)) + 1e-12

    def test_constraint_gradients_match_fd(self):
        rng = np.random.default_rng(2)
        data = random_window(rng, n_clusters=2, t_h=2)
        prog = build_deterministic(data)
        for row in prog.iter_constraints():
            w = rng.normal(0, 1.0, prog.n_vars)
            val, grad = row.value_and_grad(w)
            fd = fd_grad(row.value, w)
            assert np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12) <= 1e-6

    def test_batched_values_match_row_views(self):
        rng = np.random.default_rng(3)
        data = random_window(rng, n_clusters=2, t_h=3)
        prog = build_deterministic(data)
        w = rng.normal(0, 1.0, prog.n_vars)
        stacked = prog.constraint_values(w)
        rows = [row.value(w) for row in prog.iter_constraints()]
        np.testing.assert_allclose(stacked, rows, rtol=1e-12)


class TestEnergyConstraintSemantics:
    def test_energy_row_equals_simulated_energy(self):
        rng = np.random.default_rng(4)
        data = random_window(rng, n_clusters=2, t_h=3)
        prog = build_deterministic(data)
        layout = prog.layout
        w = rng.normal(0, 0.5, prog.n_vars)
        w[layout.x_ids()] = np.log(rng.uniform(18, 27, layout.steps))
        g_energy = prog.blocks[1].values(w)[0]
        u, gamma = decode(w, layout)
        log = simulate(u, data.loads, data.init, data.params)
        assert g_energy + gamma == pytest.approx(np.log(log.total_energy()), rel=1e-10)

    def test_temperature_rows_cover_applied_inputs(self):
        # horizon 0: exactly one row per cluster, constraining T(tau+1)
        params = make_params(n_clusters=2, t_cpu_max=80.0)
        data = WindowData(0, np.array([[5.0], [3.0]]), SystemState(0, [70.0, 20.0]), params)
        prog = build_deterministic(data)
        w = np.zeros(prog.n_vars)
        w[prog.layout.x_ids()] = np.log(20.0)
        w[prog.layout.y_id(0, 0)] = np.log(30.0)
        w[prog.layout.y_id(1, 0)] = np.log(25.0)
        u, _ = decode(w, prog.layout)
        log = simulate(u, data.loads, data.init, data.params)
        g = prog.blocks[0].values(w)
        for j in range(2):
            assert g[j] == pytest.approx(
                np.log(log.final_state.t_cpu[j]) - np.log(80.0), rel=1e-10
            )


class TestBuildPenalized:
    def test_zero_weights_reduce_to_gamma(self):
        rng = np.random.default_rng(5)
        data = random_window(rng, t_h=3, w_tc=0.0, w_m=0.0)
        prog = build_penalized(data)
        for _ in range(20):
            w = rng.normal(0, 2, prog.n_vars)
            assert prog.objective.value(w) == pytest.approx(
                w[prog.layout.gamma_id], rel=1e-12
            )

    def test_constant_sequence_contribution(self):
        rng = np.random.default_rng(6)
        t_h = 4
        w_tc = 3.0
        data = random_window(rng, t_h=t_h, w_tc=w_tc, w_m=0.0)
        prog = build_penalized(data)
        w = rng.normal(0, 1, prog.n_vars)
        w[prog.layout.x_ids()] = 0.7  # constant supply sequence
        gamma = w[prog.layout.gamma_id]
        expected = np.log(np.exp(gamma) + w_tc * 2 * t_h)
        assert prog.objective.value(w) == pytest.approx(expected, rel=1e-12)

    def test_objective_gradient_matches_fd(self):
        rng = np.random.default_rng(7)
        data = random_window(rng, n_clusters=2, t_h=3, w_tc=2.0, w_m=0.5)
        prog = build_penalized(data)
        for _ in range(20):
            w = rng.normal(0, 1, prog.n_vars)
            _, grad = prog.objective.value_and_grad(w)
            fd = fd_grad(prog.objective.value, w)
            assert np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12) <= 1e-6

    def test_same_constraints_as_deterministic(self):
        rng = np.random.default_rng(8)
        data = random_window(rng, n_clusters=2, t_h=2, w_tc=1.0, w_m=1.0)
        det = build_deterministic(data)
        pen = build_penalized(data)
        w = rng.normal(0, 1, det.n_vars)
        np.testing.assert_allclose(det.constraint_values(w), pen.constraint_values(w))
        np.testing.assert_allclose(det.lower, pen.lower)
        np.testing.assert_allclose(det.upper, pen.upper)


class TestBuildScenario:
    def test_single_scenario_equals_penalized(self):
        rng = np.random.default_rng(9)
        data = random_window(rng, n_clusters=2, t_h=2, w_tc=1.0)
        scen = ScenarioSet(loads=data.loads[None], start_indices=(0,))
        sp = build_scenario(data, scen)
        pp = build_penalized(data)
        w = rng.normal(0, 1, sp.n_vars)
        np.testing.assert_allclose(sp.constraint_values(w), pp.constraint_values(w))
        np.testing.assert_allclose(sp.lower, pp.lower)
        assert sp.objective.value(w) == pytest.approx(pp.objective.value(w))

    def test_dominating_scenario_binds_delay(self):
        rng = np.random.default_rng(10)
        data = random_window(rng, n_clusters=1, t_h=2)
        l1 = data.loads
        l2 = l1 + rng.uniform(0.5, 2.0, l1.shape)
        scen = ScenarioSet(loads=np.stack([l1, l2]), start_indices=(0, 1))
        prog = build_scenario(data, scen)
        ids = prog.layout.y_ids(0)
        np.testing.assert_allclose(
            prog.lower[ids], np.log(1 / 0.05 + l2[0]) - np.log(1.0)
        )

    def test_constraint_counts(self):
        rng = np.random.default_rng(11)
        n, t_h, j = 4, 2, 3
        data = random_window(rng, n_clusters=j, t_h=t_h)
        paths = np.stack([data.loads + k for k in range(n)])
        scen = ScenarioSet(loads=paths, start_indices=tuple(range(n)))
        prog = build_scenario(data, scen)
        temp, energy = prog.blocks
        assert temp.n_rows == n * (t_h + 1) * j
        assert energy.n_rows == n
        assert prog.n_constraints == n * (t_h + 1) * j + n

    def test_empty_scenarios_rejected(self):
        rng = np.random.default_rng(12)
        data = random_window(rng)
        with pytest.raises(UsageError):
            build_scenario(data, ScenarioSet(loads=np.empty((1, 0, 0)), start_indices=(0,)))

    def test_scenario_convexity_and_gradients(self):
        rng = np.random.default_rng(13)
        data = random_window(rng, n_clusters=2, t_h=1, w_tc=0.5, w_m=0.5)
        paths = np.stack([data.loads, data.loads * rng.uniform(0.5, 1.5, data.loads.shape)])
        prog = build_scenario(data, ScenarioSet(loads=paths, start_indices=(0, 1)))
        for row in prog.iter_constraints():
            w = rng.normal(0, 1, prog.n_vars)
            _, grad = row.value_and_grad(w)
            fd = fd_grad(row.value, w)
            assert np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12) <= 1e-6
            w1 = random_logspace_point(rng, prog, scale=1.0)
            w2 = random_logspace_point(rng, prog, scale=1.0)
            assert row.value((w1 + w2) / 2) <= 0.5 * (row.value(w1) + row.value(w2)) + 1e-12


class TestDecode:
    def test_zeros_decode_to_ones(self):
        layout = VariableLayout(0, 1, 2)
        u, gamma = decode(np.zeros(layout.n_vars), layout)
        np.testing.assert_allclose(u.tc, 1.0)
        np.testing.assert_allclose(u.m, 1.0)
        assert gamma == 0.0

    def test_log_roundtrip(self):
        layout = VariableLayout(0, 0, 1)
        w = np.zeros(3)
        w[layout.x_id(0)] = np.log(20.0)
        u, _ = decode(w, layout)
        assert u.tc[0] == pytest.approx(20.0, rel=1e-15)

    def test_encode_decode_identity(self):
        rng = np.random.default_rng(14)
        layout = VariableLayout(3, 4, 2)
        for _ in range(50):
            tc = rng.uniform(0.1, 50, layout.steps)
            m = rng.uniform(0.1, 200, (2, layout.steps))
            gamma = rng.normal()
            w = np.empty(layout.n_vars)
            w[layout.x_ids()] = np.log(tc)
            for j in range(2):
                w[layout.y_ids(j)] = np.log(m[j])
            w[layout.gamma_id] = gamma
            u, g = decode(w, layout)
            np.testing.assert_allclose(u.tc, tc, rtol=1e-12)
            np.testing.assert_allclose(u.m, m, rtol=1e-12)
            assert g == gamma


class TestFeasiblePointTransfer:
    """Constraint equivalence between the plant-space and log-space problems."""

    def original_feasible(self, data, u, tol=0.0):
        params = data.params
        log = simulate(u, data.loads, data.init, params)
        ok = True
        for i, r in enumerate(log.records):
            ok &= params.tc_min - tol <= r.tc <= params.tc_max + tol
            ok &= bool(np.all(r.delay <= params.d_maxes() + tol))
            state = log.records[i + 1].t_cpu if i + 1 < len(log.records) else log.final_state.t_cpu
            ok &= bool(np.all(state <= params.t_cpu_maxes() + tol))
        return ok, log.total_energy()

    def transformed_feasible(self, prog, w, tol=0.0):
        in_box = np.all(w >= prog.lower - tol) and np.all(w <= prog.upper + tol)
        return in_box and np.all(prog.constraint_values(w) <= tol)

    def test_equivalence_on_random_windows(self):
        rng = np.random.default_rng(15)
        agree_feasible = 0
        for trial in range(50):
            n_clusters = int(rng.integers(1, 3))
            t_h = int(rng.integers(0, 4))
            data = random_window(rng, n_clusters=n_clusters, t_h=t_h)
            prog = build_deterministic(data)
            layout = prog.layout
            # random plant-space candidate around the interesting region
            tc = rng.uniform(17.5, 27.5, layout.steps)
            m = np.vstack([
                (1 / 0.05 + data.loads[j]) * rng.uniform(0.9, 1.6, layout.steps)
                for j in range(n_clusters)
            ])
            u = ControlInput(tc=tc, m=m)
            orig_ok, energy = self.original_feasible(data, u)
            w = np.empty(layout.n_vars)
            w[layout.x_ids()] = np.log(tc)
            for j in range(n_clusters):
                w[layout.y_ids(j)] = np.log(m[j])
            w[layout.gamma_id] = np.log(energy)
            # tiny tolerance absorbs the float round trip through logs
            trans_ok = self.transformed_feasible(prog, w, tol=1e-9)
            assert orig_ok == trans_ok or not orig_ok
            if orig_ok:
                agree_feasible += 1
                g_energy = prog.blocks[1].values(w)[0]
                assert g_energy + w[layout.gamma_id] == pytest.approx(
                    np.log(energy), rel=1e-10
                )
        assert agree_feasible >= 10  # the sampler must hit real feasible points

    def test_transformed_point_maps_back(self):
        rng = np.random.default_rng(16)
        hits = 0
        for trial in range(50):
            data = random_window(rng, n_clusters=int(rng.integers(1, 3)), t_h=int(rng.integers(0, 3)))
            prog = build_deterministic(data)
            try:
                w = feasible_log_point(rng, data)
            except AssertionError:
                continue
            hits += 1
            assert self.transformed_feasible(prog, w, tol=1e-12)
            u, gamma = decode(w, prog.layout)
            orig_ok, energy = self.original_feasible(data, u, tol=1e-12)
            assert orig_ok
            assert energy <= np.exp(gamma) * (1 + 1e-12)
        assert hits >= 10
