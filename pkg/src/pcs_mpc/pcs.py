"""Phase-change-slurry thermodynamics.

Stored energy bookkeeping for the two-zone tank, density-based latent heat
estimation from two pressure readings, heat-pump heat flows with the
effective heat-capacity map, and the hysteretic enthalpy/temperature
relation used by the simulator.

Units: temperatures in °C, specific enthalpy in kJ/kg, energies in kWh,
heat flows in kW, volume flows in l/s.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DegenerateMaterialError, ExtrapolationWarning, InvalidMeasurementError
from .kernels import FREEZING, MELTING

G = 9.81
KJ_PER_KWH = 3600.0

Branch = Literal["melting", "freezing"]

# enthalpy tables span this temperature range; h = 0 for solid PCS at 0 °C
TABLE_T_MIN = 0.0
TABLE_T_MAX = 100.0

# cumulative liquid fraction inside each phase-change band, as (position in band, fraction)
UNIFORM_PROFILE = ((0.0, 0.0), (1.0, 1.0))
# most of the latent heat is released just below the top of the solidification range
PEAKED_FREEZE_PROFILE = ((0.0, 0.0), (0.893, 0.10), (0.973, 0.95), (1.0, 1.0))


@dataclass(frozen=True, eq=False)
class Curve:
    """Piecewise-linear table ``value(temperature)`` saturating at its end points."""

    temperature: np.ndarray
    value: np.ndarray
    name: str = "curve"

    def __post_init__(self):
        t = np.asarray(self.temperature, dtype=float)
        v = np.asarray(self.value, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError(f"{self.name}: temperature and value must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"{self.name}: temperature column must be strictly increasing")
        object.__setattr__(self, "temperature", t)
        object.__setattr__(self, "value", v)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.temperature[0]), float(self.temperature[-1])

    def __call__(self, T: float) -> float:
        lo, hi = self.domain
        if T < lo or T > hi:
            warnings.warn(f"{self.name} evaluated at {T:.3f} °C outside [{lo}, {hi}]; end-point value used",
                          ExtrapolationWarning, stacklevel=2)
        return float(np.interp(T, self.temperature, self.value))

    def integral(self, lo: float, hi: float) -> float:
        """Exact integral of the piecewise-linear interpolant over [lo, hi]."""
        pts = self.temperature[(self.temperature > lo) & (self.temperature < hi)]
        xs = np.concatenate(([lo], pts, [hi]))
        ys = np.interp(xs, self.temperature, self.value)
        return float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)))


def load_curve_csv(path: str | Path, name: str | None = None) -> Curve:
    """Read a material curve with columns ``temperature_C,value``."""
    temps, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"temperature_C", "value"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns temperature_C,value")
        for row in reader:
            temps.append(float(row["temperature_C"]))
            vals.append(float(row["value"]))
    return Curve(np.array(temps), np.array(vals), name=name or Path(path).stem)


def save_curve_csv(curve: Curve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["temperature_C", "value"])
        for t, v in zip(curve.temperature, curve.value):
            writer.writerow([repr(float(t)), repr(float(v))])


@dataclass(frozen=True, eq=False)
class PcsProperties:
    """Material data of the paraffin-in-water emulsion.

    ``cp_approx_curve`` and the two density curves are derived from the scalar
    data when not given explicitly. ``melt_profile``/``freeze_profile`` give
    the cumulative liquid fraction across each band as (relative position,
    fraction) pairs.
    """

    w_P: float = 0.3
    dh_f: float = 49.0
    cp_w: float = 4.18
    cp_p: float = 2.1
    rho_liq: float = 940.0
    rho_sol: float = 960.0
    melt_range: tuple[float, float] = (30.0, 42.0)
    freeze_range: tuple[float, float] = (24.0, 29.6)
    melt_profile: tuple[tuple[float, float], ...] = UNIFORM_PROFILE
    freeze_profile: tuple[tuple[float, float], ...] = PEAKED_FREEZE_PROFILE
    cp_approx_curve: Curve | None = None
    rho_melt_curve: Curve | None = None
    rho_freeze_curve: Curve | None = None
    _tables: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.w_P <= 1.0:
            raise ValueError(f"w_P must lie in [0, 1], got {self.w_P}")
        if self.dh_f <= 0:
            raise ValueError("dh_f must be positive")
        if self.cp_w <= 0 or self.cp_p <= 0:
            raise ValueError("heat capacities must be positive")
        if self.rho_sol < self.rho_liq:
            raise ValueError("rho_sol must exceed rho_liq")
        (fl, fh), (ml, mh) = self.freeze_range, self.melt_range
        if not (fl < fh and ml < mh):
            raise ValueError("phase-change ranges must be non-empty intervals")
        if fh > mh or fl > ml:
            raise ValueError("freeze_range must lie below or overlap melt_range from below")
        for prof in (self.melt_profile, self.freeze_profile):
            pos = np.array([p for p, _ in prof])
            frac = np.array([f for _, f in prof])
            if pos[0] != 0.0 or pos[-1] != 1.0 or frac[0] != 0.0 or frac[-1] != 1.0:
                raise ValueError("liquid-fraction profiles must run from (0, 0) to (1, 1)")
            if np.any(np.diff(pos) <= 0) or np.any(np.diff(frac) < 0):
                raise ValueError("liquid-fraction profiles must be increasing")
        if self.cp_approx_curve is not None:
            ml, mh = self.melt_range
            target = cp_pcs(self) * (mh - ml) + self.w_P * self.dh_f
            got = self.cp_approx_curve.integral(ml, mh)
            if abs(got - target) > 0.01 * target:
                raise ValueError(f"cp_approx_curve integrates to {got:.3f} kJ/kg over the melt band, expected {target:.3f}")


@dataclass(frozen=True)
class TankMeasurement:
    T_top: float
    T_center: float
    T_bottom: float
    p_center: float
    p_bottom: float
    z_center: float
    z_bottom: float


@dataclass(frozen=True)
class TankGeometry:
    """Zone masses calibrated so full zones hold the tabulated capacities (8.4 / 3.6 kWh)."""

    m_sh: float = 384.2
    m_dhw: float = 243.0
    T_sh_ref: float = 24.0
    T_dhw_ref: float = 50.0

    def __post_init__(self):
        if self.m_sh <= 0 or self.m_dhw <= 0:
            raise ValueError("zone masses must be positive")
        if self.T_sh_ref >= self.T_dhw_ref:
            raise ValueError("T_sh_ref must be below T_dhw_ref")


def cp_pcs(props: PcsProperties) -> float:
    """Mass-weighted specific heat of the emulsion, kJ/(kg K)."""
    return (1.0 - props.w_P) * props.cp_w + props.w_P * props.cp_p


def density_from_pressure(dp: float, dz: float) -> float:
    if dz <= 0 or dp <= 0:
        raise InvalidMeasurementError(f"pressure difference {dp} Pa over height {dz} m is not physical")
    return dp / (G * dz)


def liquid_fraction(rho: float, props: PcsProperties) -> float:
    if props.rho_liq == props.rho_sol:
        raise DegenerateMaterialError("rho_liq equals rho_sol; liquid fraction undefined")
    x = (rho - props.rho_sol) / (props.rho_liq - props.rho_sol)
    return min(1.0, max(0.0, x))


def latent_energy(rho: float, m_pcs: float, props: PcsProperties) -> float:
    """Latent heat held by ``m_pcs`` kg of slurry at measured density ``rho``, kWh."""
    if m_pcs <= 0:
        raise ValueError("m_pcs must be positive")
    return m_pcs * props.w_P * props.dh_f * liquid_fraction(rho, props) / KJ_PER_KWH


def stored_energy_sh(meas: TankMeasurement, geom: TankGeometry, props: PcsProperties) -> float:
    """Lower-zone energy above the lowest usable space-heating temperature, kWh."""
    if not np.isfinite(meas.T_center) or meas.T_center < geom.T_sh_ref - 5.0:
        raise InvalidMeasurementError(f"T_center = {meas.T_center} °C implausible for the SH zone")
    rho = density_from_pressure(meas.p_bottom - meas.p_center, meas.z_center - meas.z_bottom)
    sensible = geom.m_sh * cp_pcs(props) * (meas.T_center - geom.T_sh_ref) / KJ_PER_KWH
    return max(0.0, sensible + latent_energy(rho, geom.m_sh, props))


def stored_energy_dhw(meas: TankMeasurement, geom: TankGeometry, props: PcsProperties) -> float:
    """Upper-zone energy above the lowest usable hot-water temperature, kWh (sensible only)."""
    if not np.isfinite(meas.T_top) or meas.T_top < geom.T_dhw_ref - 5.0:
        raise InvalidMeasurementError(f"T_top = {meas.T_top} °C implausible for the DHW zone")
    return max(0.0, geom.m_dhw * cp_pcs(props) * (meas.T_top - geom.T_dhw_ref) / KJ_PER_KWH)


# --- hysteresis -----------------------------------------------------------------

def _band(props: PcsProperties, branch: Branch):
    if branch == "melting":
        return props.melt_range, props.melt_profile
    if branch == "freezing":
        return props.freeze_range, props.freeze_profile
    raise ValueError(f"unknown branch {branch!r}")


def fraction_table(props: PcsProperties, branch: Branch) -> tuple[np.ndarray, np.ndarray]:
    """Break points (T, liquid fraction) of the branch's liquid-fraction curve."""
    (lo, hi), prof = _band(props, branch)
    t = np.array([lo + p * (hi - lo) for p, _ in prof])
    f = np.array([f for _, f in prof])
    return t, f


def branch_liquid_fraction(T: float, branch: Branch, props: PcsProperties) -> float:
    t, f = fraction_table(props, branch)
    return float(np.interp(T, t, f))


def enthalpy_table(props: PcsProperties, branch: Branch) -> tuple[np.ndarray, np.ndarray]:
    """Break points (T, h) of one branch; h = cp T + w_P dh_f F(T)."""
    key = ("h", branch)
    if key not in props._tables:
        t_band, f_band = fraction_table(props, branch)
        t = np.unique(np.concatenate(([TABLE_T_MIN], t_band, [TABLE_T_MAX])))
        h = cp_pcs(props) * t + props.w_P * props.dh_f * np.interp(t, t_band, f_band)
        props._tables[key] = (t, h)
    return props._tables[key]


def temperature_to_enthalpy(T: float, branch: Branch, props: PcsProperties) -> float:
    t, h = enthalpy_table(props, branch)
    if T < t[0] or T > t[-1]:
        warnings.warn(f"temperature {T} °C outside enthalpy table; clamped", ExtrapolationWarning, stacklevel=2)
    return float(np.interp(T, t, h))


def enthalpy_to_temperature(h: float, branch: Branch, props: PcsProperties) -> float:
    t, hh = enthalpy_table(props, branch)
    if h < hh[0] or h > hh[-1]:
        warnings.warn(f"enthalpy {h} kJ/kg outside branch range; clamped", ExtrapolationWarning, stacklevel=2)
    return float(np.interp(h, hh, t))


def branch_code(branch: Branch) -> int:
    return MELTING if branch == "melting" else FREEZING


def branch_name(code: int) -> Branch:
    return "melting" if int(code) == MELTING else "freezing"


def density_curve(props: PcsProperties, branch: Branch) -> Curve:
    """Density vs temperature for rising (melting) or falling (freezing) temperature."""
    explicit = props.rho_melt_curve if branch == "melting" else props.rho_freeze_curve
    if explicit is not None:
        return explicit
    key = ("rho", branch)
    if key not in props._tables:
        t_band, f_band = fraction_table(props, branch)
        t = np.unique(np.concatenate(([TABLE_T_MIN], t_band, [TABLE_T_MAX])))
        rho = props.rho_sol + np.interp(t, t_band, f_band) * (props.rho_liq - props.rho_sol)
        props._tables[key] = Curve(t, rho, name=f"rho_{branch}")
    return props._tables[key]


def cp_approx_curve(props: PcsProperties) -> Curve:
    """Effective heat capacity map; defaults to a triangular latent peak over the melt band."""
    if props.cp_approx_curve is not None:
        return props.cp_approx_curve
    if "cp_approx" not in props._tables:
        lo, hi = props.melt_range
        cp = cp_pcs(props)
        peak = 2.0 * props.w_P * props.dh_f / (hi - lo)
        t = np.array([TABLE_T_MIN, lo, 0.5 * (lo + hi), hi, TABLE_T_MAX])
        v = np.array([cp, cp, cp + peak, cp, cp])
        props._tables["cp_approx"] = Curve(t, v, name="cp_approx")
    return props._tables["cp_approx"]


def hp_heat_sh(vdot: float, T_sup: float, T_ret: float, props: PcsProperties, branch: Branch = "melting") -> float:
    """Heat delivered by the heat pump in space-heating mode, kW."""
    if vdot < 0:
        raise ValueError("volume flow must be non-negative")
    rho = density_curve(props, branch)(T_sup)
    cp = cp_approx_curve(props)(T_sup)
    return rho * vdot / 1000.0 * cp * (T_sup - T_ret)


def hp_heat_dhw(vdot: float, T_sup: float, T_ret: float, props: PcsProperties) -> float:
    """Heat delivered in hot-water mode; the slurry is fully liquid at these temperatures."""
    if vdot < 0:
        raise ValueError("volume flow must be non-negative")
    return props.rho_liq * vdot / 1000.0 * cp_pcs(props) * (T_sup - T_ret)
