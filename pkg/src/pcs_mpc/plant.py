"""Nonlinear ground-truth plant.

Two tank zones carry specific enthalpy on a hysteretic melt/freeze branch,
the heat pump follows an ambient-dependent COP map, the battery saturates at
empty/full and the grid is the slack bus of the electric node. Each 15 min
control step is integrated with 1 min explicit sub-steps (see ``kernels``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from . import kernels as K
from .errors import ConfigurationError, SimulationFault
from .model import EnergyFlowSetpoints, ModelParameters, load_heat, pv_power
from .pcs import (
    G,
    PcsProperties,
    TankGeometry,
    TankMeasurement,
    density_curve,
    enthalpy_table,
    temperature_to_enthalpy,
)

MODE_CODES = {"off": 0, "SH": 1, "DHW": 2}

TELEMETRY_COLUMNS = (
    "timestamp", "T_amb", "T_sh", "T_dhw", "branch_sh", "e_sh", "e_dhw", "e_bld", "e_b", "soc",
    "q_hp_sh", "q_hp_dhw", "q_hr", "q_sh", "q_l_sh", "q_l_dhw", "p_l", "p_pv",
    "p_hp", "p_hr", "p_b_ch", "p_b_dis", "p_grid_import", "p_grid_export",
    "p_g_dem_set", "p_g_sup_set", "grid_residual", "cop_sh", "cop_dhw",
    "pv_direct", "pv_to_battery", "pv_export", "pv_conv_loss", "loss_sh", "loss_dhw",
    "hp_on", "hp_mode",
)


@dataclass(frozen=True)
class CopModel:
    """Affine COP maps in ambient temperature, clipped to a band per mode."""

    a_sh: float = 4.676
    b_sh: float = -0.1103
    min_sh: float = 2.6
    max_sh: float = 4.6
    a_dhw: float = 3.5
    b_dhw: float = -0.06
    min_dhw: float = 2.2
    max_dhw: float = 3.2

    def __post_init__(self):
        for lo, hi in ((self.min_sh, self.max_sh), (self.min_dhw, self.max_dhw)):
            if not 1.0 <= lo <= hi:
                raise ConfigurationError("COP clip range must satisfy 1 <= min <= max")


def cop_eval(model: CopModel, T_amb, mode: str):
    if mode == "SH":
        v = np.clip(model.a_sh + model.b_sh * np.asarray(T_amb, float), model.min_sh, model.max_sh)
    elif mode == "DHW":
        v = np.clip(model.a_dhw + model.b_dhw * np.asarray(T_amb, float), model.min_dhw, model.max_dhw)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class PlantParameters:
    props: PcsProperties = field(default_factory=PcsProperties)
    geometry: TankGeometry = field(default_factory=TankGeometry)
    model: ModelParameters = field(default_factory=ModelParameters)
    cop: CopModel = field(default_factory=CopModel)
    e_b_max: float = 21.0
    eta: float = 0.95
    y_pv: float = 6.0
    mu: float = 0.9
    p_hp_el_max: float = 3.7
    q_hp_max: float = 11.1
    q_hr_max: float = 6.0
    p_b_max: float = 7.0
    p_grid_max: float = 7.5
    h_min: float = 15.0
    inner_min: float = 1.0
    t_supply_full: float = 23.0
    t_supply_zero: float = 21.0
    safety_band: tuple[float, float] = (5.0, 95.0)
    # sensor positions (m above tank floor) and fill height
    z_bottom: float = 0.1
    z_center: float = 0.8
    z_surface: float = 1.6
    # load-side temperatures used to express loads as measured flows
    T_sh_flow: float = 30.0
    T_sh_return: float = 25.0
    T_dhw_draw: float = 45.0
    T_cold: float = 10.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        ratio = self.h_min / self.inner_min
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("outer step must be an integer multiple of the inner step")
        if not 0 < self.eta <= 1:
            raise ConfigurationError("eta must lie in (0, 1]")
        if self.t_supply_full <= self.t_supply_zero:
            raise ConfigurationError("t_supply_full must exceed t_supply_zero")

    @property
    def n_inner(self) -> int:
        return int(round(self.h_min / self.inner_min))

    def h_ref(self) -> tuple[float, float]:
        g = self.geometry
        return (temperature_to_enthalpy(g.T_sh_ref, "melting", self.props),
                temperature_to_enthalpy(g.T_dhw_ref, "melting", self.props))


@dataclass(frozen=True)
class Meters:
    """Cumulative energies, kWh."""

    pv_generated: float = 0.0
    pv_direct: float = 0.0
    pv_to_battery: float = 0.0
    pv_export: float = 0.0
    pv_conv_loss: float = 0.0
    grid_import: float = 0.0
    grid_export: float = 0.0
    heat_hp_sh: float = 0.0
    heat_hp_dhw: float = 0.0
    heat_hr: float = 0.0
    heat_sh_delivered: float = 0.0
    heat_dhw_delivered: float = 0.0
    el_hp: float = 0.0
    el_hr: float = 0.0
    el_load: float = 0.0
    batt_charge: float = 0.0
    batt_discharge: float = 0.0
    # net standing losses can be negative when a zone sits below its reference temperature
    loss_tank: float = 0.0


@dataclass(frozen=True)
class PlantState:
    time: datetime
    h_sh: float
    h_dhw: float
    branch_sh: int
    branch_dhw: int
    soc: float  # %
    e_bld: float = 0.0
    hp_on: bool = False
    hp_mode: str = "off"
    meters: Meters = field(default_factory=Meters)

    @classmethod
    def initial(cls, time: datetime, params: PlantParameters, T_sh: float = 30.0, T_dhw: float = 55.0,
                soc: float = 50.0, branch_sh: str = "melting") -> "PlantState":
        code = K.MELTING if branch_sh == "melting" else K.FREEZING
        return cls(time=time,
                   h_sh=temperature_to_enthalpy(T_sh, branch_sh, params.props),
                   h_dhw=temperature_to_enthalpy(T_dhw, "melting", params.props),
                   branch_sh=code, branch_dhw=K.MELTING, soc=soc)

    def temperatures(self, params: PlantParameters) -> tuple[float, float]:
        tables = _tables(params)
        return (float(K.branch_temperature(self.h_sh, self.branch_sh, *tables)),
                float(K.branch_temperature(self.h_dhw, self.branch_dhw, *tables)))

    def energies(self, params: PlantParameters) -> tuple[float, float]:
        """Zone energies relative to the reference temperatures, kWh (may be negative)."""
        href_sh, href_dhw = params.h_ref()
        g = params.geometry
        return g.m_sh * (self.h_sh - href_sh) / 3600.0, g.m_dhw * (self.h_dhw - href_dhw) / 3600.0

    def e_b(self, params: PlantParameters) -> float:
        return self.soc / 100.0 * params.e_b_max


@dataclass(frozen=True)
class ScenarioSlice:
    """Exogenous inputs held constant over one control step."""

    time: datetime
    T_amb: float
    g: float
    q_l_sh: float
    q_l_dhw: float
    p_l: float


@dataclass(frozen=True)
class Measurements:
    tank: TankMeasurement
    soc: float
    vdot_l_sh: float
    T_l_sh_dem: float
    T_l_sh_sup: float
    vdot_l_dhw: float
    T_l_dhw_dem: float
    T_l_dhw_sup: float
    T_amb: float

    def q_l_sh(self) -> float:
        return load_heat(self.vdot_l_sh, self.T_l_sh_dem, self.T_l_sh_sup)

    def q_l_dhw(self) -> float:
        return load_heat(self.vdot_l_dhw, self.T_l_dhw_dem, self.T_l_dhw_sup)


def _tables(params: PlantParameters):
    T_m, h_m = enthalpy_table(params.props, "melting")
    T_f, h_f = enthalpy_table(params.props, "freezing")
    return T_m, h_m, T_f, h_f


def synthesize_measurements(state: PlantState, params: PlantParameters, sl: ScenarioSlice | None = None,
                            rng: np.random.Generator | None = None) -> Measurements:
    """Sensor readings the controller would see; pressures follow the branch density."""
    T_sh, T_dhw = state.temperatures(params)
    branch = "melting" if state.branch_sh == K.MELTING else "freezing"
    rho_sh = float(np.interp(T_sh, *_density_points(params, branch)))
    rho_dhw = float(np.interp(T_dhw, *_density_points(params, "melting")))
    # hydrostatic column: upper zone above the center sensor, lower zone between center and bottom
    p_center = rho_dhw * G * (params.z_surface - params.z_center)
    p_bottom = p_center + rho_sh * G * (params.z_center - params.z_bottom)
    sigma = params.noise_sigma
    if sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        T_sh_m = T_sh + rng.normal(0, sigma)
        T_dhw_m = T_dhw + rng.normal(0, sigma)
        p_center += rng.normal(0, sigma)
        p_bottom += rng.normal(0, sigma)
    else:
        T_sh_m, T_dhw_m = T_sh, T_dhw
    tank = TankMeasurement(T_top=T_dhw_m, T_center=T_sh_m, T_bottom=T_sh_m, p_center=p_center,
                           p_bottom=p_bottom, z_center=params.z_center, z_bottom=params.z_bottom)
    q_sh = sl.q_l_sh if sl else 0.0
    q_dhw = sl.q_l_dhw if sl else 0.0
    cp = 4.18
    return Measurements(
        tank=tank, soc=state.soc,
        vdot_l_sh=q_sh / (cp * (params.T_sh_flow - params.T_sh_return)),
        T_l_sh_dem=params.T_sh_flow, T_l_sh_sup=params.T_sh_return,
        vdot_l_dhw=q_dhw / (cp * (params.T_dhw_draw - params.T_cold)),
        T_l_dhw_dem=params.T_dhw_draw, T_l_dhw_sup=params.T_cold,
        T_amb=sl.T_amb if sl else float("nan"),
    )


def _density_points(params: PlantParameters, branch: str):
    c = density_curve(params.props, branch)
    return c.temperature, c.value


@dataclass(frozen=True)
class StepTelemetry:
    rows: np.ndarray  # (n_inner, len(TELEMETRY_COLUMNS) - 1) without the timestamp column
    times: list
    grid_residual: float  # mean actual-minus-planned grid exchange over the step, kW
    p_grid_mean: float


def advance(state: PlantState, u: EnergyFlowSetpoints, sl: ScenarioSlice, params: PlantParameters,
            rng: np.random.Generator | None = None) -> tuple[PlantState, Measurements, StepTelemetry]:
    n = params.n_inner
    dt_h = params.inner_min / 60.0
    mp = params.model
    g = params.geometry
    href_sh, href_dhw = params.h_ref()

    cop_sh = cop_eval(params.cop, sl.T_amb, "SH")
    cop_dhw = cop_eval(params.cop, sl.T_amb, "DHW")
    q_hp_sh = min(max(u.q_hp_sh, 0.0), params.p_hp_el_max * cop_sh, params.q_hp_max)
    q_hp_dhw = min(max(u.q_hp_dhw, 0.0), params.p_hp_el_max * cop_dhw, params.q_hp_max)
    if q_hp_sh > 0 and q_hp_dhw > 0:  # modes are exclusive
        q_hp_sh = 0.0
    q_hr = min(max(u.q_hr, 0.0), params.q_hr_max)
    p_ch = min(max(u.p_b_ch, 0.0), params.p_b_max)
    p_dis = min(max(u.p_b_dis, 0.0), params.p_b_max)

    steps_per_outer = params.h_min / params.inner_min
    a_sh = mp.alpha1 ** (1.0 / steps_per_outer)
    a_dhw_outer = mp.alpha2 - mp.nu
    a_dhw = a_dhw_outer ** (1.0 / steps_per_outer)
    c_dhw = mp.nu * (1.0 - a_dhw) / (1.0 - a_dhw_outer) if a_dhw_outer < 1 else 0.0
    a_b = mp.alpha4 ** (1.0 / steps_per_outer)

    out = np.zeros((n, K.N_COLS))
    T_m, h_m, T_f, h_f = _tables(params)
    h_sh, h_dhw, br_sh, br_dhw, e_b, e_bld = K.integrate_zones(
        n, dt_h, state.h_sh, state.h_dhw, state.branch_sh, state.branch_dhw,
        state.e_b(params), state.e_bld,
        T_m, h_m, T_f, h_f,
        g.m_sh, g.m_dhw, href_sh, href_dhw,
        a_sh, a_dhw, c_dhw,
        a_b, mp.beta7 / steps_per_outer, mp.beta8 / steps_per_outer, params.e_b_max,
        q_hp_sh, q_hp_dhw, q_hr, max(u.q_sh, 0.0), sl.q_l_dhw, sl.q_l_sh,
        p_ch, p_dis, params.t_supply_full, params.t_supply_zero,
        out,
    )
    lo, hi = params.safety_band
    for col, name in ((K.COL_T_SH, "SH"), (K.COL_T_DHW, "DHW")):
        bad = (out[:, col] < lo) | (out[:, col] > hi)
        if np.any(bad):
            raise SimulationFault(f"{name} zone temperature {out[bad, col][0]:.2f} °C outside [{lo}, {hi}] at {sl.time}")

    eta = params.eta
    p_pv = float(pv_power(sl.g, params.y_pv, params.mu))
    p_hp = q_hp_sh / cop_sh + q_hp_dhw / cop_dhw
    pc, pd = out[:, K.COL_P_CH], out[:, K.COL_P_DIS]
    demand = (sl.p_l + p_hp + q_hr) * np.ones(n)
    net = demand + eta * pc - eta * pd - eta * p_pv  # > 0 import
    if np.any(np.abs(net) > params.p_grid_max + 1e-6):
        raise SimulationFault(f"grid exchange {np.abs(net).max():.2f} kW exceeds {params.p_grid_max} kW at {sl.time}")
    imp = np.maximum(net, 0.0)
    exp = np.maximum(-net, 0.0)
    pv_ac = eta * p_pv
    direct = np.minimum(pv_ac, demand)
    surplus = pv_ac - direct
    to_batt = np.minimum(surplus, eta * pc)
    pv_exp = surplus - to_batt
    conv = (1.0 - eta) * p_pv
    planned_grid = u.p_g_dem - u.p_g_sup
    residual = net - planned_grid

    m = state.meters
    heat_sh = out[:, K.COL_Q_SH]
    meters = replace(
        m,
        pv_generated=m.pv_generated + p_pv * n * dt_h,
        pv_direct=m.pv_direct + direct.sum() * dt_h,
        pv_to_battery=m.pv_to_battery + to_batt.sum() * dt_h,
        pv_export=m.pv_export + pv_exp.sum() * dt_h,
        pv_conv_loss=m.pv_conv_loss + conv * n * dt_h,
        grid_import=m.grid_import + imp.sum() * dt_h,
        grid_export=m.grid_export + exp.sum() * dt_h,
        heat_hp_sh=m.heat_hp_sh + q_hp_sh * n * dt_h,
        heat_hp_dhw=m.heat_hp_dhw + q_hp_dhw * n * dt_h,
        heat_hr=m.heat_hr + q_hr * n * dt_h,
        heat_sh_delivered=m.heat_sh_delivered + heat_sh.sum() * dt_h,
        heat_dhw_delivered=m.heat_dhw_delivered + sl.q_l_dhw * n * dt_h,
        el_hp=m.el_hp + p_hp * n * dt_h,
        el_hr=m.el_hr + q_hr * n * dt_h,
        el_load=m.el_load + sl.p_l * n * dt_h,
        batt_charge=m.batt_charge + pc.sum() * dt_h,
        batt_discharge=m.batt_discharge + pd.sum() * dt_h,
        loss_tank=m.loss_tank + (out[:, K.COL_LOSS_SH].sum() + out[:, K.COL_LOSS_DHW].sum()),
    )
    mode = "DHW" if q_hp_dhw > 0 else ("SH" if q_hp_sh > 0 else "off")
    new = PlantState(time=sl.time + timedelta(minutes=params.h_min), h_sh=float(h_sh), h_dhw=float(h_dhw),
                     branch_sh=int(br_sh), branch_dhw=int(br_dhw),
                     soc=float(np.clip(100.0 * e_b / params.e_b_max, 0.0, 100.0)), e_bld=float(e_bld),
                     hp_on=mode != "off", hp_mode=mode, meters=meters)

    ones = np.ones(n)
    rows = np.column_stack([
        sl.T_amb * ones, out[:, K.COL_T_SH], out[:, K.COL_T_DHW], out[:, K.COL_BRANCH_SH],
        out[:, K.COL_E_SH], out[:, K.COL_E_DHW], out[:, K.COL_E_BLD], out[:, K.COL_E_B],
        100.0 * out[:, K.COL_E_B] / params.e_b_max,
        q_hp_sh * ones, q_hp_dhw * ones, q_hr * ones, heat_sh, sl.q_l_sh * ones, sl.q_l_dhw * ones,
        sl.p_l * ones, p_pv * ones, p_hp * ones, q_hr * ones, pc, pd, imp, exp,
        u.p_g_dem * ones, u.p_g_sup * ones, residual, cop_sh * ones, cop_dhw * ones,
        direct, to_batt, pv_exp, conv * ones, out[:, K.COL_LOSS_SH], out[:, K.COL_LOSS_DHW],
        float(mode != "off") * ones, MODE_CODES[mode] * ones,
    ])
    times = [sl.time + timedelta(minutes=params.inner_min * k) for k in range(n)]
    meas = synthesize_measurements(new, params, sl, rng)
    return new, meas, StepTelemetry(rows, times, float(residual.mean()), float(net.mean()))
