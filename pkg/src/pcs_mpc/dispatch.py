"""Rule layer turning the continuous QP optimum into realizable set points.

Pipeline per control step (``postprocess``): clamp solver noise, pick one
heat-pump mode, apply the compressor minimum power, honour minimum up/down
times, quantize the heating rod, move the electric difference between planned
and realized heat generation onto battery or grid, and finally close the
node balance exactly through the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ConfigurationError
from .model import ElectricContext, EnergyFlowSetpoints, node_residual

Mode = Literal["SH", "DHW", "off"]


@dataclass(frozen=True)
class ActuatorLimits:
    hr_stages: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0)
    p_hp_el_min: float = 1.0
    p_hp_el_max: float = 3.7
    q_hp_max: float = 11.1
    min_up: float = 30.0  # min
    min_dn: float = 30.0  # min
    soc_redirect_threshold: float = 90.0  # %
    p_b_ch_max: float = 7.0
    p_b_dis_max: float = 7.0
    p_g_max: float = 7.5
    e_b_max: float = 21.0
    beta_ch: float = 0.223
    beta_dis: float = 0.205
    eps_el: float = 1e-4
    h: float = 15.0  # min

    def __post_init__(self):
        st = tuple(float(s) for s in self.hr_stages)
        if not st or st[0] != 0.0 or any(b <= a for a, b in zip(st, st[1:])):
            raise ConfigurationError("heating-rod stages must be ascending and start at 0")
        object.__setattr__(self, "hr_stages", st)
        if self.min_up < self.h or self.min_dn < self.h:
            raise ConfigurationError("minimum up/down times must be at least one sampling interval")
        if not 0 < self.p_hp_el_min <= self.p_hp_el_max:
            raise ConfigurationError("need 0 < p_hp_el_min <= p_hp_el_max")


@dataclass(frozen=True)
class ActuatorState:
    hp_on: bool = False
    time_in_state: float = 1e9  # min; a long-off compressor may start at once
    current_mode: Mode = "off"
    deferred_sh: float = 0.0  # kWh requested below the minimum power and not yet delivered
    deferred_dhw: float = 0.0

    def __post_init__(self):
        if self.time_in_state < 0:
            raise ConfigurationError("time_in_state must be >= 0")

    def advance(self, on: bool, mode: Mode, h: float, deferred: tuple[float, float] = (0.0, 0.0)) -> "ActuatorState":
        t = self.time_in_state + h if on == self.hp_on else h
        return ActuatorState(on, t, mode if on else "off", *deferred)


def quantize_heating_rod(q_hr_opt: float, limits: ActuatorLimits) -> float:
    """Largest stage not above the request."""
    stages = np.asarray(limits.hr_stages)
    idx = np.searchsorted(stages, q_hr_opt + 1e-12, side="right") - 1
    return float(stages[max(idx, 0)])


def apply_hp_min_power(q_hp_opt: float, cop: float, limits: ActuatorLimits) -> float:
    q_min = cop * limits.p_hp_el_min
    q_max = min(cop * limits.p_hp_el_max, limits.q_hp_max)
    if q_hp_opt <= 0 or q_hp_opt < q_min:
        return 0.0
    return float(min(q_hp_opt, q_max))


def enforce_min_times(desired_on: bool, state: ActuatorState, limits: ActuatorLimits) -> bool:
    if state.hp_on and not desired_on and state.time_in_state < limits.min_up:
        return True
    if not state.hp_on and desired_on and state.time_in_state < limits.min_dn:
        return False
    return desired_on


def net_flows(u: EnergyFlowSetpoints) -> EnergyFlowSetpoints:
    """Remove simultaneous charge/discharge and grid demand/supply; the node balance is unchanged."""
    d_b = u.p_b_ch - u.p_b_dis
    d_g = u.p_g_dem - u.p_g_sup
    return replace(u, p_b_ch=max(d_b, 0.0), p_b_dis=max(-d_b, 0.0),
                   p_g_dem=max(d_g, 0.0), p_g_sup=max(-d_g, 0.0))


@dataclass(frozen=True)
class RebalanceResult:
    setpoints: EnergyFlowSetpoints
    residual: float
    saturated: bool


def _battery_caps(soc: float, limits: ActuatorLimits, alpha_b: float = 0.9991) -> tuple[float, float]:
    """Charge/discharge power the battery can absorb/deliver over one step without leaving [0, E_max]."""
    e = soc / 100.0 * limits.e_b_max * alpha_b
    ch = min(limits.p_b_ch_max, max(0.0, (limits.e_b_max - e) / limits.beta_ch))
    dis = min(limits.p_b_dis_max, max(0.0, e / limits.beta_dis))
    return ch, dis


def rebalance(planned: EnergyFlowSetpoints, realized_thermal, soc: float, p_pv: float,
              ctx: ElectricContext, limits: ActuatorLimits) -> RebalanceResult:
    """Shift ``P_add`` = planned minus realized heat-generation power onto battery and grid.

    ``realized_thermal`` is ``(q_hp_sh, q_hp_dhw, q_hr)``. Battery-side changes
    are divided by ``eta`` since they cross the inverter. Whatever imbalance
    remains (forecast error, saturation) is closed through the grid.
    """
    q_sh, q_dhw, q_hr = (float(v) for v in realized_thermal)
    eta = ctx.eta
    p_plan = planned.q_hp_sh / ctx.cop_sh + planned.q_hp_dhw / ctx.cop_dhw + planned.q_hr
    p_real = q_sh / ctx.cop_sh + q_dhw / ctx.cop_dhw + q_hr
    p_add = p_plan - p_real
    ch_cap, dis_cap = _battery_caps(soc, limits)
    u = replace(planned, q_hp_sh=q_sh, q_hp_dhw=q_dhw, q_hr=q_hr)
    u = replace(u, p_b_ch=min(u.p_b_ch, ch_cap), p_b_dis=min(u.p_b_dis, dis_cap))

    if p_add > 0:
        if p_pv >= p_add:
            if soc < limits.soc_redirect_threshold:
                add = min(p_add / eta, ch_cap - u.p_b_ch)
                u = replace(u, p_b_ch=u.p_b_ch + add)
                rest = p_add - add * eta
            else:
                rest = p_add
            u = replace(u, p_g_sup=u.p_g_sup + rest)
        else:
            cut = min(u.p_g_dem, p_add)
            u = replace(u, p_g_dem=u.p_g_dem - cut)
            rest = p_add - cut
            cut = min(u.p_b_dis, rest / eta)
            u = replace(u, p_b_dis=u.p_b_dis - cut)
            rest -= cut * eta
            u = replace(u, p_g_sup=u.p_g_sup + rest)
    elif p_add < 0:
        u = replace(u, p_g_dem=u.p_g_dem - p_add)

    # forecast error and battery caps: the grid closes whatever is left
    r = node_residual(u, ctx)
    if r > 0:
        u = replace(u, p_g_sup=u.p_g_sup + r)
    elif r < 0:
        u = replace(u, p_g_dem=u.p_g_dem - r)
    u = net_flows(u)

    saturated = False
    if u.p_g_dem > limits.p_g_max or u.p_g_sup > limits.p_g_max:
        saturated = True
        u = replace(u, p_g_dem=min(u.p_g_dem, limits.p_g_max), p_g_sup=min(u.p_g_sup, limits.p_g_max))
    return RebalanceResult(u, node_residual(u, ctx), saturated)


@dataclass(frozen=True)
class PostprocResult:
    setpoints: EnergyFlowSetpoints
    state: ActuatorState
    residual: float
    saturated: bool
    forced: str | None = None  # "on" or "off" when minimum times overrode the request
    events: tuple[str, ...] = field(default_factory=tuple)


def choose_mode(q_sh: float, q_dhw: float, ctx: ElectricContext, limits: ActuatorLimits,
                deferred: tuple[float, float] = (0.0, 0.0)) -> tuple[Mode, float]:
    """DHW wins when both modes are requested and DHW alone clears the minimum power.

    A mode whose sub-minimum requests have piled up to one step at minimum
    power (``deferred``, kWh) is started at minimum power.
    """
    dt = limits.h / 60.0
    for mode, q_req, cop, backlog in (("DHW", q_dhw, ctx.cop_dhw, deferred[1]), ("SH", q_sh, ctx.cop_sh, deferred[0])):
        q = apply_hp_min_power(q_req, cop, limits)
        if q > 0:
            return mode, q
        q_min = cop * limits.p_hp_el_min
        if q_req > DEFER_EPS and backlog + q_req * dt >= q_min * dt:
            return mode, q_min
    return "off", 0.0


DEFER_EPS = 1e-3  # kW; smaller requests count as "no heat wanted" and clear the backlog


def _update_deferred(deferred: float, q_req: float, q_real: float, dt: float) -> float:
    if q_req <= DEFER_EPS:
        return 0.0
    return max(0.0, deferred + (q_req - q_real) * dt)


def postprocess(u_opt: EnergyFlowSetpoints, state: ActuatorState, soc: float,
                ctx: ElectricContext, limits: ActuatorLimits) -> PostprocResult:
    arr = u_opt.as_array()
    arr[(arr < 0) & (arr >= -1e-9)] = 0.0
    arr = np.maximum(arr, 0.0)
    u = net_flows(EnergyFlowSetpoints.from_array(arr))
    events = []

    backlog = (state.deferred_sh, state.deferred_dhw)
    mode, q = choose_mode(u.q_hp_sh, u.q_hp_dhw, ctx, limits, backlog)
    desired = mode != "off"
    on = enforce_min_times(desired, state, limits)
    forced = None
    if on and not desired:
        forced = "on"
        mode = state.current_mode if state.current_mode != "off" else "SH"
        cop = ctx.cop_dhw if mode == "DHW" else ctx.cop_sh
        q = cop * limits.p_hp_el_min
        events.append(f"min-up forces heat pump on in {mode} mode")
    elif desired and not on:
        forced = "off"
        mode, q = "off", 0.0
        events.append("min-down keeps heat pump off")
    q_hp_sh = q if mode == "SH" else 0.0
    q_hp_dhw = q if mode == "DHW" else 0.0
    q_hr = quantize_heating_rod(u.q_hr, limits)

    res = rebalance(u, (q_hp_sh, q_hp_dhw, q_hr), soc, ctx.p_pv, ctx, limits)
    if res.saturated:
        events.append(f"grid limit saturated, residual {res.residual:.4g} kW")
    dt = limits.h / 60.0
    deferred = (_update_deferred(backlog[0], u.q_hp_sh, q_hp_sh, dt),
                _update_deferred(backlog[1], u.q_hp_dhw, q_hp_dhw, dt))
    return PostprocResult(res.setpoints, state.advance(on, mode, limits.h, deferred), res.residual, res.saturated,
                          forced, tuple(events))
