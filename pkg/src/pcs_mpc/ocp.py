"""Finite-horizon optimal control problem and its condensed dense QP.

Decision vector ``z = [u_0 ... u_{nb-1}, s_1 ... s_N]``: one eight-flow input
move per block followed by one non-negative slack per state and prediction
step. Predicted states are eliminated through ``x_{i+1} = A x_i + B u_i + E d_i``
so that ``x_i = c_i + Gamma_i z``.

The node balance, the SH tracking band and the joint compressor limit are
imposed once per block on block-averaged forecasts: inputs are constant over a
block while loads, PV and COP are not, so per-step equalities would leave no
feasible point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from datetime import datetime

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .errors import BuildError, ConfigurationError
from .forecast import ForecastBundle
from .model import FLOW_NAMES, N_FLOWS, N_STATES, STATE_NAMES, EnergyFlowSetpoints, StateSpace, SystemState
from .qp import QuadraticProgram

log = logging.getLogger(__name__)

I_HP_SH, I_HP_DHW, I_HR, I_SH, I_CH, I_DIS, I_DEM, I_SUP = range(N_FLOWS)
CLAMP_NOISE = 1e-9


# --- configuration --------------------------------------------------------------

@dataclass(frozen=True)
class TuningParameters:
    """Scalar tuning knobs from which the per-step schedule is resolved.

    Heat-pump weights are ``numerator / COP(t)``; the grid-demand weight
    switches on forecast PV; tariffs multiply the grid factors.
    """

    day_start_h: float = 6.0
    day_end_h: float = 22.0
    r_e_day: tuple[float, float, float, float] = (3.0, 5.0, 1.0, 3.0)
    r_e_night: tuple[float, float, float, float] = (0.01, 0.5, 0.1, 1.0)
    r_hp_sh_num: float = 5.0
    r_hp_dhw_num: float = 20.0
    r_hr: float = 250.0
    r_q_sh: float = 0.0
    r_b_ch: float = 1.0
    r_b_dis: float = 1.0
    grid_dem_factor_low_pv: float = 1e3
    grid_dem_factor_high_pv: float = 1e4
    pv_threshold_kw: float = 1.0
    grid_sup_factor: float = 10.0
    e_sh_set: float = 8.4
    e_dhw_set: float = 3.6
    e_bld_set: float = 0.0
    e_b_set: float = 21.0

    def __post_init__(self):
        vals = [self.r_hp_sh_num, self.r_hp_dhw_num, self.r_hr, self.r_q_sh, self.r_b_ch, self.r_b_dis,
                self.grid_dem_factor_low_pv, self.grid_dem_factor_high_pv, self.grid_sup_factor,
                *self.r_e_day, *self.r_e_night]
        if min(vals) < 0:
            raise ConfigurationError("tuning weights must be non-negative")
        if len(self.r_e_day) != N_STATES or len(self.r_e_night) != N_STATES:
            raise ConfigurationError("state weights need one value per state")
        if not 0 <= self.day_start_h <= self.day_end_h <= 24:
            raise ConfigurationError("day window must satisfy 0 <= start <= end <= 24")

    @classmethod
    def for_objective(cls, objective: str, **overrides) -> "TuningParameters":
        """Preset for ``self-consumption`` (default weights) or ``cost``.

        The cost preset only reshapes the grid weights: demand is penalized
        uniformly and export lightly, so the tariff ratio drives the trade-off.
        """
        if objective == "self-consumption":
            base = cls()
        elif objective == "cost":
            base = cls(grid_dem_factor_low_pv=1e3, grid_dem_factor_high_pv=1e3, grid_sup_factor=1.0)
        else:
            raise ConfigurationError(f"unknown objective {objective!r}")
        return replace(base, **overrides)

    def is_day(self, t: datetime) -> bool:
        hour = t.hour + t.minute / 60.0
        return self.day_start_h <= hour < self.day_end_h

    def schedule(self, fc: ForecastBundle) -> "TuningSchedule":
        N = fc.N
        times = fc.times(N + 1)
        day = np.array([self.is_day(t) for t in times])
        w_x = np.where(day[:, None], np.asarray(self.r_e_day), np.asarray(self.r_e_night))
        x_set = np.tile([self.e_sh_set, self.e_dhw_set, self.e_bld_set, self.e_b_set], (N + 1, 1))
        w_u = np.zeros((N, N_FLOWS))
        w_u[:, I_HP_SH] = self.r_hp_sh_num / fc.cop_sh
        w_u[:, I_HP_DHW] = self.r_hp_dhw_num / fc.cop_dhw
        w_u[:, I_HR] = self.r_hr
        w_u[:, I_SH] = self.r_q_sh
        w_u[:, I_CH] = self.r_b_ch
        w_u[:, I_DIS] = self.r_b_dis
        dem_factor = np.where(fc.p_pv <= self.pv_threshold_kw, self.grid_dem_factor_low_pv,
                              self.grid_dem_factor_high_pv)
        w_u[:, I_DEM] = dem_factor * fc.tariff_dem
        w_u[:, I_SUP] = self.grid_sup_factor * fc.tariff_sup
        return TuningSchedule(w_x, w_u, x_set, day)


@dataclass(eq=False)
class TuningSchedule:
    """Resolved weights over one horizon.

    ``w_x`` (N+1, 4) weights squared tracking errors of ``x_0 .. x_N`` against
    ``x_set``; ``w_u`` (N, 8) weights squared inputs ``u_0 .. u_{N-1}``.
    """

    w_x: np.ndarray
    w_u: np.ndarray
    x_set: np.ndarray
    day: np.ndarray | None = None

    def __post_init__(self):
        self.w_x = np.asarray(self.w_x, dtype=float)
        self.w_u = np.asarray(self.w_u, dtype=float)
        self.x_set = np.asarray(self.x_set, dtype=float)
        N = self.w_u.shape[0]
        if self.w_x.shape != (N + 1, N_STATES) or self.x_set.shape != (N + 1, N_STATES):
            raise ConfigurationError("state weight / set-point arrays must have shape (N+1, 4)")
        if self.w_u.shape != (N, N_FLOWS):
            raise ConfigurationError("input weights must have shape (N, 8)")
        if np.any(self.w_x < 0) or np.any(self.w_u < 0):
            raise ConfigurationError("weights must be non-negative")

    @property
    def N(self) -> int:
        return self.w_u.shape[0]


@dataclass(frozen=True)
class ConstraintSet:
    """Bounds in kWh (states) and kW (inputs)."""

    e_min: tuple[float, float, float, float] = (0.0, 0.0, -2.0, 7.35)
    e_max: tuple[float, float, float, float] = (8.4, 3.6, 2.0, 21.0)
    q_hp_max: float = 11.1
    p_hp_el_max: float = 3.7
    q_hr_max: float = 6.0
    q_sh_max: float = np.inf
    p_b_ch_max: float = 7.0
    p_b_dis_max: float = 7.0
    p_g_dem_max: float = 7.5
    p_g_sup_max: float = 7.5
    sigma_th: float = 0.5
    eps_el: float = 1e-4

    def validate(self) -> None:
        lo, hi = np.asarray(self.e_min, float), np.asarray(self.e_max, float)
        if lo.shape != (N_STATES,) or hi.shape != (N_STATES,):
            raise BuildError("state bounds need one value per state")
        if np.any(lo > hi):
            raise BuildError(f"state bounds with min > max: {lo} > {hi}")
        if min(self.q_hp_max, self.p_hp_el_max, self.q_hr_max, self.q_sh_max, self.p_b_ch_max,
               self.p_b_dis_max, self.p_g_dem_max, self.p_g_sup_max) < 0:
            raise BuildError("input upper bounds must be >= 0")
        if self.sigma_th <= 0 or self.eps_el <= 0:
            raise BuildError("sigma_th and eps_el must be positive")

    def input_upper(self, cop_sh: float, cop_dhw: float) -> np.ndarray:
        """Per-flow upper bounds; the heat-pump thermal limit follows the COP."""
        return np.array([
            min(self.q_hp_max, self.p_hp_el_max * cop_sh),
            min(self.q_hp_max, self.p_hp_el_max * cop_dhw),
            self.q_hr_max, self.q_sh_max, self.p_b_ch_max, self.p_b_dis_max,
            self.p_g_dem_max, self.p_g_sup_max,
        ])


@dataclass(frozen=True)
class ControllerConfig:
    h: float = 15.0
    N: int = 48
    move_blocks: tuple[int, ...] = (1,) * 8 + (2,) * 8 + (4,) * 6
    soft_penalty: float = 1e4
    tol: float = 1e-6
    max_iter: int = 50

    def __post_init__(self):
        if self.N <= 0 or self.h <= 0:
            raise ConfigurationError("N and h must be positive")
        if any(b <= 0 for b in self.move_blocks) or sum(self.move_blocks) != self.N:
            raise ConfigurationError(f"move blocks {self.move_blocks} must be positive and sum to N = {self.N}")
        if self.soft_penalty <= 0:
            raise ConfigurationError("soft_penalty must be positive")

    @classmethod
    def with_horizon(cls, N: int, **kw) -> "ControllerConfig":
        """Default block pattern truncated or extended to ``N`` steps."""
        blocks, left = [], N
        for b in cls.move_blocks:
            if left <= 0:
                break
            blocks.append(min(b, left))
            left -= blocks[-1]
        while left > 0:
            blocks.append(min(4, left))
            left -= blocks[-1]
        return cls(N=N, move_blocks=tuple(blocks), **kw)


# --- variable map ---------------------------------------------------------------

@dataclass(frozen=True)
class Column:
    kind: str  # "u" or "slack"
    name: str
    index: int  # block for inputs, prediction step (1..N) for slacks


class VariableMap:
    def __init__(self, move_blocks):
        self.move_blocks = tuple(int(b) for b in move_blocks)
        self.n_blocks = len(self.move_blocks)
        self.N = sum(self.move_blocks)
        self.block_of_step = np.repeat(np.arange(self.n_blocks), self.move_blocks)
        self.n_u = self.n_blocks * N_FLOWS
        self.n = self.n_u + self.N * N_STATES
        cols = [Column("u", f, b) for b in range(self.n_blocks) for f in FLOW_NAMES]
        cols += [Column("slack", s, i) for i in range(1, self.N + 1) for s in STATE_NAMES]
        self.columns = cols

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.columns)

    def u(self, block: int, flow: int) -> int:
        return block * N_FLOWS + flow

    def slack(self, step: int, state: int) -> int:
        """Column of the slack for state ``state`` at prediction step ``step`` (1..N)."""
        return self.n_u + (step - 1) * N_STATES + state

    def inputs(self, z) -> np.ndarray:
        """Per-step (N, 8) input trajectory expanded from the block moves."""
        return np.asarray(z)[: self.n_u].reshape(self.n_blocks, N_FLOWS)[self.block_of_step]

    def slacks(self, z) -> np.ndarray:
        return np.asarray(z)[self.n_u:].reshape(self.N, N_STATES)


# --- trajectories and direct cost -----------------------------------------------

@dataclass(eq=False)
class Trajectory:
    x: np.ndarray  # (N+1, 4)
    u: np.ndarray  # (N, 8)
    slack: np.ndarray | None = None  # (N, 4)


def evaluate_cost(traj: Trajectory, t: TuningSchedule, soft_penalty: float = 0.0) -> float:
    """Direct summation of tracking, input and slack costs."""
    e = np.asarray(traj.x) - t.x_set
    J = float(np.sum(t.w_x * e * e) + np.sum(t.w_u * np.asarray(traj.u) ** 2))
    if traj.slack is not None:
        J += soft_penalty * float(np.sum(traj.slack))
    return J


def prediction_matrices(ss: StateSpace, x0, D, vmap: VariableMap):
    """``c`` (N+1, 4) and ``Gamma`` (N+1, 4, n_u) with ``x_i = c_i + Gamma_i u``."""
    N = vmap.N
    c = np.empty((N + 1, N_STATES))
    Gam = np.zeros((N + 1, N_STATES, vmap.n_u))
    c[0] = x0
    for i in range(N):
        c[i + 1] = ss.A @ c[i] + ss.E @ D[i]
        Gam[i + 1] = ss.A @ Gam[i]
        b = vmap.block_of_step[i]
        Gam[i + 1][:, b * N_FLOWS:(b + 1) * N_FLOWS] += ss.B
    return c, Gam


def _block_mean(values, vmap: VariableMap) -> np.ndarray:
    return np.bincount(vmap.block_of_step, weights=values, minlength=vmap.n_blocks) / np.asarray(vmap.move_blocks)


def build_qp(x0: SystemState, fc: ForecastBundle, t: TuningSchedule, c: ConstraintSet,
             cfg: ControllerConfig, ss: StateSpace) -> QuadraticProgram:
    c.validate()
    N = cfg.N
    if fc.N != N or t.N != N:
        raise BuildError(f"forecast length {fc.N} / schedule length {t.N} differ from horizon N = {N}")
    if np.any(fc.cop_sh <= 0) or np.any(fc.cop_dhw <= 0):
        raise BuildError("forecast COP must be positive")
    vm = VariableMap(cfg.move_blocks)
    nu, n = vm.n_u, vm.n
    x0a = x0.as_array() if isinstance(x0, SystemState) else np.asarray(x0, dtype=float)
    D = np.column_stack([fc.q_l_sh, fc.q_l_dhw])
    cx, Gam = prediction_matrices(ss, x0a, D, vm)

    # cost
    H = np.zeros((n, n))
    f = np.zeros(n)
    W = t.w_x[1:]  # (N, 4)
    G1 = Gam[1:]  # (N, 4, nu)
    WG = G1 * W[:, :, None]
    H[:nu, :nu] = 2.0 * np.einsum("isk,isl->kl", G1, WG)
    e = cx - t.x_set
    f[:nu] = -2.0 * np.einsum("isk,is->k", WG, e[1:])
    wu_block = np.zeros((vm.n_blocks, N_FLOWS))
    np.add.at(wu_block, vm.block_of_step, t.w_u)
    H[np.arange(nu), np.arange(nu)] += 2.0 * wu_block.ravel()
    f[nu:] = -cfg.soft_penalty
    const = float(np.sum(t.w_x * e * e))
    H = 0.5 * (H + H.T)

    rows, rhs = [], []

    def add(row, b):
        rows.append(row)
        rhs.append(b)

    eye = np.eye(n)
    inv_sh = 1.0 / fc.cop_sh
    inv_dhw = 1.0 / fc.cop_dhw
    for b in range(vm.n_blocks):
        steps = vm.block_of_step == b
        ub = c.input_upper(float(fc.cop_sh[steps].min()), float(fc.cop_dhw[steps].min()))
        for j in range(N_FLOWS):
            col = vm.u(b, j)
            add(-eye[col], 0.0)
            if np.isfinite(ub[j]):
                add(eye[col], ub[j])
    mean_inv_sh = _block_mean(inv_sh, vm)
    mean_inv_dhw = _block_mean(inv_dhw, vm)
    max_inv_sh = np.array([inv_sh[vm.block_of_step == b].max() for b in range(vm.n_blocks)])
    max_inv_dhw = np.array([inv_dhw[vm.block_of_step == b].max() for b in range(vm.n_blocks)])
    ql_sh = _block_mean(fc.q_l_sh, vm)
    p_l = _block_mean(fc.p_l, vm)
    p_pv = _block_mean(fc.p_pv, vm)
    eta = fc.eta
    for b in range(vm.n_blocks):
        # joint compressor electric limit
        row = np.zeros(n)
        row[vm.u(b, I_HP_SH)] = max_inv_sh[b]
        row[vm.u(b, I_HP_DHW)] = max_inv_dhw[b]
        add(row, c.p_hp_el_max)
        # SH delivery tracks the SH load within sigma_th
        row = np.zeros(n)
        row[vm.u(b, I_SH)] = 1.0
        add(row, ql_sh[b] + c.sigma_th)
        add(-row, c.sigma_th - ql_sh[b])
        # node balance: a.u = p_l - eta p_pv within eps_el
        row = np.zeros(n)
        row[vm.u(b, I_DEM)] = 1.0
        row[vm.u(b, I_DIS)] = eta
        row[vm.u(b, I_CH)] = -eta
        row[vm.u(b, I_SUP)] = -1.0
        row[vm.u(b, I_HP_SH)] = -mean_inv_sh[b]
        row[vm.u(b, I_HP_DHW)] = -mean_inv_dhw[b]
        row[vm.u(b, I_HR)] = -1.0
        target = p_l[b] - eta * p_pv[b]
        add(row, target + c.eps_el)
        add(-row, c.eps_el - target)

    lo = np.asarray(c.e_min, float)
    hi = np.asarray(c.e_max, float)
    for i in range(1, N + 1):
        for j in range(N_STATES):
            s_col = vm.slack(i, j)
            if np.isfinite(hi[j]):
                row = np.zeros(n)
                row[:nu] = Gam[i, j]
                row[s_col] = -1.0
                add(row, hi[j] - cx[i, j])
            if np.isfinite(lo[j]):
                row = np.zeros(n)
                row[:nu] = -Gam[i, j]
                row[s_col] = -1.0
                add(row, cx[i, j] - lo[j])
            add(-eye[s_col], 0.0)

    G = np.array(rows)
    h = np.array(rhs, dtype=float)

    try:
        cholesky(H + 1e-9 * max(1.0, np.abs(H).max()) * np.eye(n), lower=True, check_finite=False)
    except LinAlgError as exc:  # pragma: no cover - weights are squares
        raise BuildError("condensed Hessian is not positive semidefinite") from exc

    return QuadraticProgram(H=H, f=f, G=G, h=h, variable_map=vm.columns, const=const,
                            meta={"vmap": vm, "c": cx, "Gamma": Gam, "x0": x0a, "D": D, "schedule": t,
                                  "soft_penalty": cfg.soft_penalty})


def trajectory_from_solution(qp: QuadraticProgram, z) -> Trajectory:
    """Predicted states, per-step inputs and slacks from a decision vector."""
    vm: VariableMap = qp.meta["vmap"]
    z = np.asarray(z, dtype=float)
    x = qp.meta["c"] + qp.meta["Gamma"] @ z[: vm.n_u]
    return Trajectory(x=x, u=vm.inputs(z), slack=vm.slacks(z))


def extract_first_input(solution, variable_map) -> EnergyFlowSetpoints:
    """Block-0 flows from the solution vector; tiny negative noise is clamped to 0."""
    x = np.asarray(getattr(solution, "x", solution), dtype=float)
    if isinstance(variable_map, VariableMap):
        columns = variable_map.columns
    else:
        columns = variable_map
    vals = {}
    slack_total = 0.0
    for k, col in enumerate(columns):
        if col.kind == "u" and col.index == 0:
            vals[col.name] = x[k]
        elif col.kind == "slack":
            slack_total += x[k]
    if set(vals) != set(FLOW_NAMES):
        raise BuildError("variable map does not contain all block-0 flows")
    out = {}
    for name in FLOW_NAMES:
        v = float(vals[name])
        if -CLAMP_NOISE <= v < 0.0:
            v = 0.0
        elif v < 0.0:
            log.warning("solver returned %s = %.3g < 0; clamped", name, v)
            v = 0.0
        out[name] = v
    if slack_total > 1e-6:
        log.info("soft state bounds active, total slack %.4g kWh", slack_total)
    return EnergyFlowSetpoints(**out)
