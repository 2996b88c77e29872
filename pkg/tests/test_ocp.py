from dataclasses import replace
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcs_mpc.errors import BuildError, ConfigurationError
from pcs_mpc.forecast import ForecastBundle
from pcs_mpc.model import FLOW_NAMES, N_FLOWS, SystemState, simulate
from pcs_mpc.ocp import (
    I_CH,
    I_DEM,
    I_DIS,
    I_HP_DHW,
    I_HP_SH,
    I_HR,
    I_SUP,
    ConstraintSet,
    ControllerConfig,
    Trajectory,
    TuningParameters,
    TuningSchedule,
    VariableMap,
    build_qp,
    evaluate_cost,
    extract_first_input,
    trajectory_from_solution,
)
from pcs_mpc.qp import solve

START = datetime(2019, 3, 12, 9, 0)
X0 = SystemState(5.0, 2.0, 0.0, 12.0)


def bundle(N, rng=None, pv=2.0, eta=0.95):
    rng = rng or np.random.default_rng(0)
    return ForecastBundle(
        start=START, q_l_sh=rng.uniform(0.5, 2.0, N), q_l_dhw=rng.uniform(0.0, 1.0, N),
        p_l=rng.uniform(0.2, 1.0, N), p_pv=pv * rng.uniform(0.5, 1.5, N),
        cop_sh=rng.uniform(3.0, 4.5, N), cop_dhw=rng.uniform(2.3, 3.0, N),
        tariff_dem=np.full(N, 30.0), tariff_sup=np.full(N, 8.0), eta=eta)


def expansion(blocks):
    """Map from blocked input moves to per-step inputs (oracle for move blocking)."""
    N, nb = sum(blocks), len(blocks)
    T = np.zeros((N * N_FLOWS, nb * N_FLOWS))
    k = 0
    for b, L in enumerate(blocks):
        for _ in range(L):
            T[k * N_FLOWS:(k + 1) * N_FLOWS, b * N_FLOWS:(b + 1) * N_FLOWS] = np.eye(N_FLOWS)
            k += 1
    return T


def direct_cost(z, qp, fc, sched, ss, penalty):
    """Cost by forward simulation and direct summation, no condensed matrices."""
    vm = qp.meta["vmap"]
    U = vm.inputs(z)
    D = np.column_stack([fc.q_l_sh, fc.q_l_dhw])
    X = simulate(ss, X0.as_array(), U, D)
    return evaluate_cost(Trajectory(X, U, vm.slacks(z)), sched, penalty)


def test_column_count(ss):
    cfg = ControllerConfig(N=4, move_blocks=(1, 1, 2))
    fc = bundle(4)
    qp = build_qp(X0, fc, TuningParameters().schedule(fc), ConstraintSet(), cfg, ss)
    assert qp.n == 3 * 8 + 4 * 4 == 40
    assert len(qp.variable_map) == 40
    assert sorted((c.kind, c.name, c.index) for c in qp.variable_map) == sorted(
        set((c.kind, c.name, c.index) for c in qp.variable_map))


def test_only_grid_supply_weight_touches_supply_columns(ss):
    N = 4
    cfg = ControllerConfig(N=N, move_blocks=(1, 1, 2))
    fc = bundle(N)
    w_u = np.zeros((N, N_FLOWS))
    w_u[:, I_SUP] = 3.0
    sched = TuningSchedule(np.zeros((N + 1, 4)), w_u, np.zeros((N + 1, 4)))
    qp = build_qp(X0, fc, sched, ConstraintSet(), cfg, ss)
    vm = qp.meta["vmap"]
    sup = [vm.u(b, I_SUP) for b in range(vm.n_blocks)]
    slack = list(range(vm.n_u, vm.n))
    touched_H = set(np.flatnonzero(np.any(qp.H != 0, axis=0)))
    touched_f = set(np.flatnonzero(qp.f != 0))
    assert touched_H <= set(sup) and touched_H
    assert touched_f <= set(sup) | set(slack)


def test_node_rows(ss):
    N = 3
    cfg = ControllerConfig(N=N, move_blocks=(1, 1, 1))
    fc = bundle(N)
    c = ConstraintSet()
    qp = build_qp(X0, fc, TuningParameters().schedule(fc), c, cfg, ss)
    vm = qp.meta["vmap"]
    for b in range(N):
        rows = np.flatnonzero(np.abs(qp.G[:, vm.u(b, I_DEM)]) == 1.0)
        rows = [r for r in rows if np.count_nonzero(qp.G[r]) > 1]
        assert len(rows) == 2
        up = [r for r in rows if qp.G[r, vm.u(b, I_DEM)] > 0][0]
        g = qp.G[up]
        assert g[vm.u(b, I_DIS)] == pytest.approx(fc.eta)
        assert g[vm.u(b, I_CH)] == pytest.approx(-fc.eta)
        assert g[vm.u(b, I_SUP)] == -1.0
        assert g[vm.u(b, I_HR)] == -1.0
        assert g[vm.u(b, I_HP_SH)] == pytest.approx(-1.0 / fc.cop_sh[b])
        assert g[vm.u(b, I_HP_DHW)] == pytest.approx(-1.0 / fc.cop_dhw[b])
        target = fc.p_l[b] - fc.eta * fc.p_pv[b]
        assert qp.h[up] == pytest.approx(target + c.eps_el)
        lo = [r for r in rows if r != up][0]
        np.testing.assert_allclose(qp.G[lo], -g)
        assert qp.h[lo] == pytest.approx(c.eps_el - target)


class TestEvaluateCost:
    def test_zero(self):
        N = 4
        sched = TuningSchedule(np.ones((N + 1, 4)), np.ones((N, 8)), np.zeros((N + 1, 4)))
        assert evaluate_cost(Trajectory(np.zeros((N + 1, 4)), np.zeros((N, 8))), sched) == 0.0

    def test_heating_rod(self):
        N = 4
        w_u = np.zeros((N, 8))
        w_u[:, I_HR] = 250.0
        sched = TuningSchedule(np.zeros((N + 1, 4)), w_u, np.zeros((N + 1, 4)))
        u = np.zeros((N, 8))
        u[0, I_HR] = 2.0
        assert evaluate_cost(Trajectory(np.zeros((N + 1, 4)), u), sched) == 1000.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_condensed_cost_matches_direct(seed):
    from pcs_mpc.model import ModelParameters, build_matrices

    ss = build_matrices(ModelParameters())
    rng = np.random.default_rng(seed)
    cfg = ControllerConfig()
    fc = bundle(cfg.N, rng)
    sched = TuningParameters().schedule(fc)
    qp = build_qp(X0, fc, sched, ConstraintSet(), cfg, ss)
    z = rng.uniform(0, 5, qp.n)
    assert qp.objective(z) == pytest.approx(direct_cost(z, qp, fc, sched, ss, cfg.soft_penalty), rel=1e-8)


def test_condensed_prediction_matches_simulation(ss, rng):
    cfg = ControllerConfig()
    fc = bundle(cfg.N, rng)
    qp = build_qp(X0, fc, TuningParameters().schedule(fc), ConstraintSet(), cfg, ss)
    z = rng.uniform(0, 5, qp.n)
    tr = trajectory_from_solution(qp, z)
    X = simulate(ss, X0.as_array(), tr.u, np.column_stack([fc.q_l_sh, fc.q_l_dhw]))
    np.testing.assert_allclose(tr.x, X, atol=1e-10)


def test_unit_blocks_equal_unblocked(ss, rng):
    N = 6
    blocks = (1, 2, 3)
    fc = bundle(N, rng)
    sched = TuningParameters().schedule(fc)
    c = replace(ConstraintSet(), e_min=(-np.inf,) * 4, e_max=(np.inf,) * 4)
    unb = build_qp(X0, fc, sched, c, ControllerConfig(N=N, move_blocks=(1,) * N), ss)
    blk = build_qp(X0, fc, sched, c, ControllerConfig(N=N, move_blocks=blocks), ss)
    T = expansion(blocks)
    nu_u, nu_b = N * N_FLOWS, len(blocks) * N_FLOWS
    np.testing.assert_allclose(blk.H[:nu_b, :nu_b], T.T @ unb.H[:nu_u, :nu_u] @ T, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(blk.f[:nu_b], T.T @ unb.f[:nu_u], rtol=1e-12, atol=1e-9)
    # unblocked Hessian recovered from the direct cost by polarization
    J = lambda z: direct_cost(z, unb, fc, sched, ss, 1e4)  # noqa: E731
    z0 = np.zeros(unb.n)
    for i, j in [(0, 0), (3, 3), (0, 11), (5, 40)]:
        ei, ej = np.eye(unb.n)[i], np.eye(unb.n)[j]
        assert unb.H[i, j] == pytest.approx(J(ei + ej) - J(ei) - J(ej) + J(z0), rel=1e-8)
        assert unb.f[i] == pytest.approx(0.5 * (J(-ei) - J(ei)), rel=1e-8)


def test_slacks_equal_predicted_violations(ss):
    N = 8
    cfg = ControllerConfig(N=N, move_blocks=(1,) * N)
    fc = bundle(N, pv=0.0)
    x0 = SystemState(9.5, 0.5, 0.0, 8.0)  # SH above capacity and DHW nearly empty
    c = ConstraintSet()
    qp = build_qp(x0, fc, TuningParameters().schedule(fc), c, cfg, ss)
    sol = solve(qp)
    assert sol.status == "optimal"
    tr = trajectory_from_solution(qp, sol.x)
    X = simulate(ss, x0.as_array(), tr.u, np.column_stack([fc.q_l_sh, fc.q_l_dhw]))[1:]
    viol = np.maximum(0.0, np.maximum(X - np.array(c.e_max), np.array(c.e_min) - X))
    assert viol.max() > 0.1
    np.testing.assert_allclose(tr.slack, viol, atol=1e-7)
    # hard input bounds hold on every block
    for b in range(N):
        ub = c.input_upper(fc.cop_sh[b], fc.cop_dhw[b])
        assert np.all(tr.u[b] >= -1e-7) and np.all(tr.u[b] <= ub + 1e-7)


def test_grid_supply_weight_monotone(ss):
    N = 8
    cfg = ControllerConfig(N=N, move_blocks=(2, 2, 4))
    fc = bundle(N, pv=5.0)
    totals = []
    for w in (0.1, 1.0, 10.0, 100.0):
        sched = replace(TuningParameters(grid_sup_factor=w)).schedule(fc)
        sol = solve(build_qp(X0, fc, sched, ConstraintSet(), cfg, ss))
        assert sol.status == "optimal"
        totals.append(VariableMap(cfg.move_blocks).inputs(sol.x)[:, I_SUP].sum())
    assert all(b <= a + 1e-6 for a, b in zip(totals, totals[1:]))


class TestExtract:
    def test_identity_and_clamp(self):
        vm = VariableMap((2, 2))
        z = np.zeros(vm.n)
        z[:8] = [1, 2, 3, 4, 5, 6, 7, -5e-10]
        z[8:16] = 99.0
        u = extract_first_input(z, vm)
        assert u.as_array().tolist() == [1, 2, 3, 4, 5, 6, 7, 0.0]

    def test_blocks_share_values(self):
        vm = VariableMap((3, 1))
        z = np.arange(vm.n, dtype=float)
        U = vm.inputs(z)
        np.testing.assert_array_equal(U[0], U[2])
        assert not np.array_equal(U[2], U[3])


class TestValidation:
    def test_bad_bounds(self, ss):
        fc = bundle(4)
        with pytest.raises(BuildError):
            build_qp(X0, fc, TuningParameters().schedule(fc), ConstraintSet(e_min=(9, 0, 0, 0)),
                     ControllerConfig(N=4, move_blocks=(4,)), ss)

    def test_horizon_mismatch(self, ss):
        fc = bundle(5)
        with pytest.raises(BuildError):
            build_qp(X0, fc, TuningParameters().schedule(fc), ConstraintSet(), ControllerConfig(N=4, move_blocks=(4,)), ss)

    def test_blocks_must_sum_to_N(self):
        with pytest.raises(ConfigurationError):
            ControllerConfig(N=10, move_blocks=(4, 4))

    def test_with_horizon(self):
        assert sum(ControllerConfig.with_horizon(96).move_blocks) == 96
        assert ControllerConfig.with_horizon(12).move_blocks == (1,) * 8 + (2, 2)


class TestSchedule:
    def test_day_night_and_pv_switch(self):
        fc = bundle(48)
        fc.p_pv[:] = 0.0
        fc.p_pv[3] = 2.0
        s = TuningParameters().schedule(fc)
        assert s.w_u[3, I_DEM] == 1e4 * 30.0 and s.w_u[4, I_DEM] == 1e3 * 30.0
        assert s.w_u[0, I_SUP] == 10 * 8.0
        assert s.w_u[0, I_HP_SH] == pytest.approx(5.0 / fc.cop_sh[0])
        assert s.w_u[0, I_HP_DHW] == pytest.approx(20.0 / fc.cop_dhw[0])
        # 09:00 start: step 52 would be 22:00; within 48 steps the last state is at 21:00
        assert s.day.all()
        night = TuningParameters(day_end_h=12.0).schedule(fc)
        np.testing.assert_array_equal(night.w_x[-1], TuningParameters().r_e_night)

    def test_cost_objective_changes_only_grid(self):
        a, b = TuningParameters(), TuningParameters.for_objective("cost")
        assert a.r_hr == b.r_hr and a.r_e_day == b.r_e_day
        assert b.grid_dem_factor_high_pv == b.grid_dem_factor_low_pv
        with pytest.raises(ConfigurationError):
            TuningParameters.for_objective("profit")


def test_flow_names_order():
    assert FLOW_NAMES[I_HP_SH] == "q_hp_sh" and FLOW_NAMES[I_SUP] == "p_g_sup"
