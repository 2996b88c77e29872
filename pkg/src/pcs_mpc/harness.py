"""Closed-loop experiment runner, rule baseline and KPI evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .config import RunConfig
from .dispatch import ActuatorState, net_flows, postprocess, quantize_heating_rod
from .errors import InvalidMeasurementError
from .forecast import ForecastBundle, HistoryBuffer, LoadSample, forecast_loads, forecast_pv, load_irradiance_csv
from .model import (
    ElectricContext,
    EnergyFlowSetpoints,
    SystemState,
    build_matrices,
    fit_state_space,
    goodness_of_fit,
    simulate,
)
from .ocp import build_qp, extract_first_input, trajectory_from_solution
from .pcs import stored_energy_dhw, stored_energy_sh
from .plant import (
    TELEMETRY_COLUMNS,
    Measurements,
    PlantParameters,
    PlantState,
    advance,
    cop_eval,
    synthesize_measurements,
)
from .qp import solve
from .scenario import STEPS_PER_DAY, PlantScenario, constant_scenario

log = logging.getLogger(__name__)

RUNTIME_BINS = (0.0, 0.5, 0.75, 1.0, 1.25, 1.5, np.inf)
AMBIENT_BINS = (-np.inf, 0.0, 5.0, 10.0, 15.0, 20.0, np.inf)
PV_HOUR_THRESHOLD = 1e-6  # kW


# --- rule controller ------------------------------------------------------------

@dataclass
class RuleController:
    """Thermostat on stored energies plus greedy PV-first battery dispatch.

    SH zone: heat pump starts below ``sh_on`` of capacity and stops above
    ``sh_off``. DHW zone: starts below ``dhw_on`` kWh and stops at ``dhw_off``;
    DHW has priority and the heating rod adds one stage when the zone is
    nearly empty. The battery charges from PV surplus and the grid covers any
    deficit. With ``discharge=True`` the battery also covers deficits down to
    ``soc_min`` (a stronger variant, not the reference baseline).
    """

    e_sh_max: float = 8.4
    sh_on: float = 0.25
    sh_off: float = 0.85
    dhw_on: float = 1.0
    dhw_off: float = 3.4
    hr_below: float = 0.2
    hr_power: float = 2.0
    soc_min: float = 35.0
    discharge: bool = False
    sh_active: bool = False
    dhw_active: bool = False

    def step(self, x: SystemState, q_l_sh: float, soc: float, ctx: ElectricContext, p_hp_el_max: float,
             q_hp_max: float, limits) -> EnergyFlowSetpoints:
        if x.e_sh < self.sh_on * self.e_sh_max:
            self.sh_active = True
        elif x.e_sh > self.sh_off * self.e_sh_max:
            self.sh_active = False
        if x.e_dhw < self.dhw_on:
            self.dhw_active = True
        elif x.e_dhw > self.dhw_off:
            self.dhw_active = False
        q_dhw = min(q_hp_max, p_hp_el_max * ctx.cop_dhw) if self.dhw_active else 0.0
        q_sh = min(q_hp_max, p_hp_el_max * ctx.cop_sh) if self.sh_active and not self.dhw_active else 0.0
        q_hr = quantize_heating_rod(self.hr_power, limits) if x.e_dhw < self.hr_below else 0.0
        p_el = q_sh / ctx.cop_sh + q_dhw / ctx.cop_dhw + q_hr
        eta = ctx.eta
        surplus = eta * ctx.p_pv - ctx.p_l - p_el
        e_b = soc / 100.0 * limits.e_b_max
        ch = dis = 0.0
        if surplus > 0:
            ch = min(surplus / eta, limits.p_b_ch_max, max(0.0, (limits.e_b_max - e_b) / limits.beta_ch))
        elif self.discharge:
            room = max(0.0, (e_b - self.soc_min / 100.0 * limits.e_b_max) / limits.beta_dis)
            dis = min(-surplus / eta, limits.p_b_dis_max, room)
        rest = surplus - eta * ch + eta * dis
        dem, sup = (0.0, rest) if rest > 0 else (-rest, 0.0)
        return EnergyFlowSetpoints(q_sh, q_dhw, q_hr, q_l_sh, ch, dis, dem, sup)


# --- closed loop ----------------------------------------------------------------

@dataclass
class RunResult:
    telemetry: pd.DataFrame
    steps: pd.DataFrame
    kpis: "KpiReport"
    events: list = field(default_factory=list)
    final_state: PlantState | None = None


def _periodic(arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Values at ``idx``, wrapping indices past the end back by whole days."""
    n = arr.size
    idx = np.array(idx)
    while np.any(idx >= n):
        idx = np.where(idx >= n, idx - STEPS_PER_DAY, idx)
    return arr[np.maximum(idx, 0)]


def estimate_state(meas: Measurements, plant: PlantParameters, e_bld: float, events: list, when) -> SystemState:
    g, props = plant.geometry, plant.props
    try:
        e_sh = stored_energy_sh(meas.tank, g, props)
    except InvalidMeasurementError as exc:
        events.append(f"{when}: {exc}; E_SH taken as 0")
        e_sh = 0.0
    try:
        e_dhw = stored_energy_dhw(meas.tank, g, props)
    except InvalidMeasurementError as exc:
        events.append(f"{when}: {exc}; E_DHW taken as 0")
        e_dhw = 0.0
    return SystemState(e_sh, e_dhw, e_bld, meas.soc / 100.0 * plant.e_b_max)


def run_closed_loop(scenario: PlantScenario, cfg: RunConfig, config_watcher=None) -> RunResult:
    plant = cfg.plant
    rng = np.random.default_rng(cfg.seed)
    ss = build_matrices(cfg.model)
    N = cfg.controller.N
    w = scenario.warmup_steps
    n = len(scenario)
    buf = HistoryBuffer()
    for k in range(w):
        buf.record(scenario.times[k], LoadSample(scenario.q_l_sh[k], scenario.q_l_dhw[k], scenario.p_l[k]))

    g_fc = None
    if cfg.irradiance_forecast:
        series = load_irradiance_csv(cfg.irradiance_forecast)
        g_fc = series.reindex(pd.DatetimeIndex(scenario.times)).to_numpy()
        g_fc = np.where(np.isnan(g_fc), scenario.g, g_fc)
    g_source = scenario.g if g_fc is None else g_fc

    init = {**cfg.initial, **scenario.initial}
    state = PlantState.initial(scenario.times[w], plant, T_sh=init["T_sh"], T_dhw=init["T_dhw"], soc=init["soc"],
                               branch_sh=init.get("branch_sh", "freezing"))
    act = ActuatorState()
    rule = RuleController(e_sh_max=cfg.constraints.e_max[0], discharge=cfg.rule_battery_discharge)
    events: list[str] = []
    tel_rows, tel_times, step_log = [], [], []
    lim = replace(cfg.actuator, e_b_max=plant.e_b_max, beta_ch=cfg.model.beta7, beta_dis=cfg.model.beta8,
                  eps_el=cfg.constraints.eps_el, h=cfg.controller.h)

    for k in range(w, n):
        if config_watcher is not None:
            cfg = replace(cfg, **{a: getattr(config_watcher.poll(), a) for a in ("tuning", "constraints")})
        sl = scenario.slice(k)
        now = sl.time
        meas = synthesize_measurements(state, plant, sl, rng)
        x0 = estimate_state(meas, plant, state.e_bld, events, now)
        q_l_sh_meas = Measurements.q_l_sh(meas) if meas.vdot_l_sh else 0.0
        q_l_dhw_meas = Measurements.q_l_dhw(meas) if meas.vdot_l_dhw else 0.0
        p_pv_now = float(forecast_pv([sl.g], plant.y_pv, plant.mu)[0])
        cop_sh = cop_eval(plant.cop, sl.T_amb, "SH")
        cop_dhw = cop_eval(plant.cop, sl.T_amb, "DHW")
        ctx = ElectricContext(p_l=sl.p_l, p_pv=p_pv_now, eta=plant.eta, cop_sh=cop_sh, cop_dhw=cop_dhw)

        rec = {"time": now, "status": "rule", "iterations": 0, "build_ms": np.nan, "solve_ms": np.nan,
               "slack_total": 0.0, "fallback": False, "degraded": False}
        u_opt = None
        if cfg.controller_type == "mpc":
            lf = forecast_loads(buf, now, N)
            idx = np.arange(k, k + N)
            T_fc = _periodic(scenario.T_amb, idx)
            q_sh_fc, q_dhw_fc, p_l_fc = lf.q_l_sh.copy(), lf.q_l_dhw.copy(), lf.p_l.copy()
            q_sh_fc[0], q_dhw_fc[0], p_l_fc[0] = q_l_sh_meas, q_l_dhw_meas, sl.p_l
            fc = ForecastBundle(
                start=now, q_l_sh=q_sh_fc, q_l_dhw=q_dhw_fc, p_l=p_l_fc,
                p_pv=forecast_pv(_periodic(g_source, idx), plant.y_pv, plant.mu),
                cop_sh=cop_eval(plant.cop, T_fc, "SH"), cop_dhw=cop_eval(plant.cop, T_fc, "DHW"),
                tariff_dem=np.full(N, cfg.tariff_dem), tariff_sup=np.full(N, cfg.tariff_sup),
                degraded=lf.degraded, eta=plant.eta)
            fc.p_pv[0] = p_pv_now
            sched = cfg.tuning.schedule(fc)
            t0 = time.perf_counter()
            qp = build_qp(x0, fc, sched, cfg.constraints, cfg.controller, ss)
            t1 = time.perf_counter()
            sol = solve(qp, tol=cfg.controller.tol, max_iter=cfg.controller.max_iter)
            rec.update(status=sol.status, iterations=sol.iterations, build_ms=(t1 - t0) * 1e3,
                       solve_ms=sol.solve_time, degraded=lf.degraded)
            if lf.degraded:
                events.append(f"{now}: load forecast degraded (missing history)")
            if sol.status == "optimal":
                u_opt = extract_first_input(sol, qp.meta["vmap"])
                traj = trajectory_from_solution(qp, sol.x)
                rec["slack_total"] = float(traj.slack.sum())
                rec["slack_step1"] = traj.slack[0].tolist()
                rec["x_pred1"] = traj.x[1].tolist()
            else:
                events.append(f"{now}: QP status {sol.status}; rule controller used")
                rec["fallback"] = True
        if u_opt is None:
            u_opt = rule.step(x0, q_l_sh_meas, meas.soc, ctx, cfg.constraints.p_hp_el_max,
                              cfg.constraints.q_hp_max, lim)
        pp = postprocess(u_opt, act, meas.soc, ctx, lim)
        for e in pp.events:
            events.append(f"{now}: {e}")
        act = pp.state
        u = pp.setpoints
        rec.update({f"opt_{k2}": v for k2, v in zip(u_opt.__dataclass_fields__, u_opt.as_array())})
        rec.update({f"set_{k2}": v for k2, v in zip(u.__dataclass_fields__, u.as_array())})
        rec.update(node_residual=pp.residual, saturated=pp.saturated, forced=pp.forced or "",
                   x0_e_sh=x0.e_sh, x0_e_dhw=x0.e_dhw, x0_e_bld=x0.e_bld, x0_e_b=x0.e_b,
                   hp_on=act.hp_on, hp_mode=act.current_mode)

        state, _, tel = advance(state, u, sl, plant, rng)
        buf.record(now, LoadSample(sl.q_l_sh, sl.q_l_dhw, sl.p_l))
        e_sh_true, e_dhw_true = state.energies(plant)
        rec.update(e_sh_next=e_sh_true, e_dhw_next=e_dhw_true, e_bld_next=state.e_bld,
                   e_b_next=state.e_b(plant), grid_residual=tel.grid_residual)
        step_log.append(rec)
        tel_rows.append(tel.rows)
        tel_times.extend(tel.times)

    telemetry = pd.DataFrame(np.vstack(tel_rows), columns=TELEMETRY_COLUMNS[1:]) if tel_rows else \
        pd.DataFrame(columns=TELEMETRY_COLUMNS[1:])
    telemetry.insert(0, "timestamp", pd.to_datetime(tel_times))
    steps = pd.DataFrame(step_log)
    kpis = compute_kpis(telemetry, steps, events)
    return RunResult(telemetry, steps, kpis, events, state)


# --- KPIs -----------------------------------------------------------------------

@dataclass
class KpiReport:
    pv_generated_kwh: float
    pv_export_kwh: float
    pv_self_consumption: float  # %
    heat_generated_kwh: float
    heat_load_kwh: float
    heat_gen_share_pv: float  # % of heat generated while PV produces
    heat_load_share_pv: float  # % of heat load occurring while PV produces
    heat_shifted_pp: float  # percentage points, gen share minus load share
    heat_shifted_kwh: float
    grid_import_total: float
    grid_import_during_pv: float
    grid_import_pv_share: float  # %
    pv_balance_error_kwh: float
    cop_by_runtime: list = field(default_factory=list)
    cop_by_ambient: list = field(default_factory=list)
    hp_activation_delay_vs_water: float | None = None
    constraint_violations: list = field(default_factory=list)
    solve_ms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(num: float, den: float, empty: float = 0.0) -> float:
    if den <= 0:
        return empty
    return float(np.clip(100.0 * num / den, 0.0, 100.0))


def _dt_hours(ts: pd.Series) -> float:
    if len(ts) < 2:
        return 1.0 / 60.0
    return float(pd.Series(pd.to_datetime(ts)).diff().dropna().median() / pd.Timedelta(hours=1))


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of contiguous True stretches."""
    m = np.concatenate(([False], mask.astype(bool), [False]))
    d = np.diff(m.astype(int))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def compute_kpis(telemetry: pd.DataFrame, steps: pd.DataFrame | None = None, events: list | None = None) -> KpiReport:
    tel = telemetry
    dt = _dt_hours(tel["timestamp"]) if len(tel) else 0.0
    col = lambda c: tel[c].to_numpy(dtype=float) if c in tel else np.zeros(len(tel))  # noqa: E731
    p_pv = col("p_pv")
    gen = p_pv.sum() * dt
    export = col("pv_export").sum() * dt
    pv_mask = p_pv > PV_HOUR_THRESHOLD
    heat_gen = col("q_hp_sh") + col("q_hp_dhw") + col("q_hr")
    heat_load = col("q_l_sh") + col("q_l_dhw")
    hg, hl = heat_gen.sum() * dt, heat_load.sum() * dt
    gen_share = _pct(heat_gen[pv_mask].sum() * dt, hg)
    load_share = _pct(heat_load[pv_mask].sum() * dt, hl)
    imp = col("p_grid_import")
    imp_total = imp.sum() * dt
    imp_pv = imp[pv_mask].sum() * dt
    balance = gen - (col("pv_direct").sum() + col("pv_to_battery").sum() + col("pv_export").sum()
                     + col("pv_conv_loss").sum()) * dt

    # COP tables over SH-mode operation
    sh = col("hp_mode") == 1
    q_sh, p_hp, T_amb = col("q_hp_sh"), col("p_hp"), col("T_amb")
    by_runtime = []
    runs = _runs(sh)
    total_on = sum(b - a for a, b in runs) * dt
    for lo, hi in zip(RUNTIME_BINS[:-1], RUNTIME_BINS[1:]):
        sel = [(a, b) for a, b in runs if lo <= (b - a) * dt < hi]
        q = sum(q_sh[a:b].sum() for a, b in sel)
        p = sum(p_hp[a:b].sum() for a, b in sel)
        t = sum(b - a for a, b in sel) * dt
        by_runtime.append({"lo_h": lo, "hi_h": hi, "cop": q / p if p > 0 else None,
                           "share": _pct(t, total_on), "runs": len(sel)})
    by_ambient = []
    for lo, hi in zip(AMBIENT_BINS[:-1], AMBIENT_BINS[1:]):
        sel = sh & (T_amb >= lo) & (T_amb < hi)
        p = p_hp[sel].sum()
        by_ambient.append({"lo_C": lo, "hi_C": hi, "cop": q_sh[sel].sum() / p if p > 0 else None,
                           "share": _pct(sel.sum() * dt, total_on)})

    violations, solve_stats = [], {}
    if steps is not None and len(steps):
        if "solve_ms" in steps:
            ms = (steps["build_ms"] + steps["solve_ms"]).dropna().to_numpy()
            if ms.size:
                solve_stats = {"median": float(np.median(ms)), "p95": float(np.percentile(ms, 95)),
                               "max": float(ms.max()), "count": int(ms.size)}
        if "slack_total" in steps:
            for _, r in steps[steps["slack_total"] > 1e-6].iterrows():
                violations.append({"time": str(r["time"]), "slack_total": float(r["slack_total"])})
    if events:
        violations.extend({"event": e} for e in events if "saturated" in e)

    return KpiReport(
        pv_generated_kwh=gen, pv_export_kwh=export, pv_self_consumption=_pct(gen - export, gen, 100.0),
        heat_generated_kwh=hg, heat_load_kwh=hl, heat_gen_share_pv=gen_share, heat_load_share_pv=load_share,
        heat_shifted_pp=gen_share - load_share, heat_shifted_kwh=(gen_share - load_share) / 100.0 * hg,
        grid_import_total=imp_total, grid_import_during_pv=imp_pv, grid_import_pv_share=_pct(imp_pv, imp_total),
        pv_balance_error_kwh=float(balance), cop_by_runtime=by_runtime, cop_by_ambient=by_ambient,
        constraint_violations=violations, solve_ms=solve_stats)


# --- PCS versus water -----------------------------------------------------------

@dataclass
class ActivationDelayReport:
    w_values: tuple
    reactivation_h: dict  # w_P -> hours after window start, or None if never
    delay_h: float  # first w_P minus water reference (w_P = 0)
    delays_h: dict  # w_P -> delay against the water reference


def reactivation_time(scenario: PlantScenario, plant: PlantParameters, T_react: float | None = None) -> float | None:
    """Hours until the SH zone reaches the reactivation temperature with the heat pump off."""
    T_react = plant.geometry.T_sh_ref if T_react is None else T_react
    init = scenario.initial
    state = PlantState.initial(scenario.times[0], plant, T_sh=init["T_sh"], T_dhw=init["T_dhw"], soc=init["soc"],
                               branch_sh=init.get("branch_sh", "freezing"))
    dt = plant.inner_min / 60.0
    elapsed = 0.0
    for k in range(len(scenario)):
        sl = scenario.slice(k)
        u = EnergyFlowSetpoints(q_sh=sl.q_l_sh)
        state, _, tel = advance(state, u, sl, plant)
        T = tel.rows[:, TELEMETRY_COLUMNS.index("T_sh") - 1]
        hit = np.flatnonzero(T <= T_react)
        if hit.size:
            return elapsed + (hit[0] + 1) * dt
        elapsed += len(T) * dt
    return None


def discharge_window(load_kw: float = 1.2, hours: float = 10.0, T_start: float = 30.0) -> PlantScenario:
    """Constant SH draw from a fully melted zone at ``T_start``, no generation."""
    return constant_scenario(hours, q_l_sh=load_kw, initial={"T_sh": T_start, "T_dhw": 55.0, "soc": 50.0,
                                                             "branch_sh": "freezing"})


def compare_pcs_vs_water(scenario: PlantScenario | None, cfg: RunConfig, w_values=(0.3, 0.0),
                         m_sh: float | None = 563.0) -> ActivationDelayReport:
    """Reactivation delay of runs that differ only in the paraffin mass fraction.

    ``m_sh`` overrides the SH-zone mass so the 0.3 run holds a given latent
    reservoir (563 kg gives 2.3 kWh); ``None`` keeps the configured geometry.
    """
    scenario = scenario or discharge_window()
    plant = cfg.plant
    if m_sh is not None:
        plant = replace(plant, geometry=replace(plant.geometry, m_sh=m_sh))
    times = {}
    for w in sorted(set(w_values) | {0.0}):
        p = replace(plant, props=replace(plant.props, w_P=w))
        times[w] = reactivation_time(scenario, p)
    ref = times[0.0]
    delays = {w: (None if t is None or ref is None else t - ref) for w, t in times.items()}
    first = w_values[0]
    return ActivationDelayReport(tuple(w_values), times, delays[first], delays)


# --- model fidelity -------------------------------------------------------------

@dataclass
class FidelityReport:
    fit: dict  # state -> goodness of fit, %
    thermal_mean: float
    refit: object


def model_fidelity(result: RunResult, params: PlantParameters) -> FidelityReport:
    """Refit the linear model on a closed-loop record and score a free-run simulation."""
    st = result.steps
    X = np.column_stack([st[c].to_numpy() for c in ("x0_e_sh", "x0_e_dhw", "x0_e_bld", "x0_e_b")])
    # true energies rather than estimator output, so clamping does not bias the fit
    e_true = np.column_stack([st[c].to_numpy() for c in ("e_sh_next", "e_dhw_next", "e_bld_next", "e_b_next")])
    X = np.vstack([X[:1], e_true])
    tel = result.telemetry
    n_inner = params.n_inner
    blocks = lambda c: tel[c].to_numpy().reshape(-1, n_inner).mean(axis=1)  # noqa: E731
    U = np.column_stack([blocks("q_hp_sh"), blocks("q_hp_dhw"), blocks("q_hr"), blocks("q_sh"),
                         blocks("p_b_ch"), blocks("p_b_dis"), blocks("p_grid_import"), blocks("p_grid_export")])
    D = np.column_stack([blocks("q_l_sh"), blocks("q_l_dhw")])
    ss = fit_state_space(X, U, D)
    Xs = simulate(ss, X[0], U, D)
    fit = {name: goodness_of_fit(X[:, i], Xs[:, i]) for i, name in enumerate(("e_sh", "e_dhw", "e_bld", "e_b"))}
    return FidelityReport(fit, float(np.mean([fit["e_sh"], fit["e_dhw"]])), ss)


# --- outputs --------------------------------------------------------------------

PLOT_DATA = {
    "loads_pv": ("q_l_sh", "q_l_dhw", "p_l", "p_pv", "T_amb"),
    "thermal_storage": ("T_sh", "T_dhw", "e_sh", "e_dhw", "branch_sh"),
    "heat_pump": ("q_hp_sh", "q_hp_dhw", "q_hr", "p_hp", "cop_sh", "cop_dhw", "hp_mode"),
    "electric": ("p_pv", "p_l", "p_hp", "p_hr", "p_b_ch", "p_b_dis", "p_grid_import", "p_grid_export", "soc"),
    "pcs_discharge": ("T_sh", "q_hp_sh", "q_sh", "q_l_sh", "e_sh"),
    "grid_relief": ("p_pv", "pv_direct", "p_b_dis", "p_grid_import", "p_grid_export"),
}


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return None if not np.isfinite(o) else float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    return o


def write_outputs(result: RunResult, out_dir, extra: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    payload = {"kpis": result.kpis.to_dict(), "events": result.events}
    if extra:
        payload.update(extra)
    paths["results"] = out / "results.json"
    paths["results"].write_text(json.dumps(_jsonable(payload), indent=2, default=str))
    paths["telemetry"] = out / "telemetry.csv"
    result.telemetry.to_csv(paths["telemetry"], index=False, float_format="%.6g")
    paths["steps"] = out / "steps.csv"
    result.steps.to_csv(paths["steps"], index=False)
    q = result.telemetry.set_index("timestamp").resample("15min").mean()
    for name, cols in PLOT_DATA.items():
        paths[name] = out / f"plot_{name}.csv"
        q[list(cols)].to_csv(paths[name], float_format="%.6g")
    return paths


def read_telemetry_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, parse_dates=["timestamp"])
