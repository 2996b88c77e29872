"""Run configuration loaded from JSON or TOML.

Every section is optional; unknown sections or keys are rejected so typos do
not silently fall back to defaults.

Example (TOML)::

    [tuning]
    r_hr = 250.0
    [controller]
    N = 48
    [tariff]
    dem = 30.0
    sup = 8.0
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dispatch import ActuatorLimits
from .errors import ConfigurationError
from .model import ModelParameters
from .ocp import ConstraintSet, ControllerConfig, TuningParameters
from .pcs import PcsProperties, TankGeometry
from .plant import CopModel, PlantParameters

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class RunConfig:
    plant: PlantParameters = field(default_factory=PlantParameters)
    tuning: TuningParameters = field(default_factory=TuningParameters)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    actuator: ActuatorLimits = field(default_factory=ActuatorLimits)
    model: ModelParameters = field(default_factory=ModelParameters)
    tariff_dem: float = 30.0  # ct per kWh; scales the grid-demand weights
    tariff_sup: float = 8.0  # ct per kWh; scales the grid-supply weight
    controller_type: str = "mpc"  # "mpc" or "rule"
    rule_battery_discharge: bool = False  # let the rule baseline discharge the battery into deficits
    objective: str = "self-consumption"
    irradiance_forecast: str | None = None  # CSV path; None = perfect forecast from the scenario
    seed: int = 0
    warmup_days: float = 7.0
    initial: dict = field(default_factory=lambda: {"T_sh": 30.0, "T_dhw": 55.0, "soc": 50.0, "branch_sh": "freezing"})

    def __post_init__(self):
        if self.controller_type not in ("mpc", "rule"):
            raise ConfigurationError(f"controller_type must be 'mpc' or 'rule', got {self.controller_type!r}")
        if self.objective not in ("self-consumption", "cost"):
            raise ConfigurationError(f"objective must be 'self-consumption' or 'cost', got {self.objective!r}")
        if self.tariff_dem < 0 or self.tariff_sup < 0:
            raise ConfigurationError("tariffs must be non-negative")

    def with_horizon(self, N: int) -> "RunConfig":
        c = self.controller
        return replace(self, controller=ControllerConfig.with_horizon(
            N, h=c.h, soft_penalty=c.soft_penalty, tol=c.tol, max_iter=c.max_iter))

    def with_objective(self, objective: str) -> "RunConfig":
        tun = TuningParameters.for_objective(objective)
        return replace(self, objective=objective, tuning=tun)

    def with_w_p(self, w_P: float) -> "RunConfig":
        return replace(self, plant=replace(self.plant, props=replace(self.plant.props, w_P=w_P)))


_SECTIONS = {
    "tuning": TuningParameters,
    "constraints": ConstraintSet,
    "controller": ControllerConfig,
    "actuator": ActuatorLimits,
    "model": ModelParameters,
}
_PLANT_SECTIONS = {"pcs": ("props", PcsProperties), "geometry": ("geometry", TankGeometry),
                   "cop": ("cop", CopModel)}
_TUPLE_KEYS = {"r_e_day", "r_e_night", "e_min", "e_max", "move_blocks", "hr_stages", "melt_range",
               "freeze_range", "safety_band"}


def _build(cls, data: dict, section: str, base=None):
    names = {f.name for f in fields(cls) if f.init and not f.name.startswith("_")}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"[{section}] unknown keys: {sorted(unknown)}")
    kw = {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in data.items()}
    try:
        return replace(base, **kw) if base is not None else cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{section}] {exc}") from exc


def config_from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    data = dict(data)
    top = {}
    for key in ("tariff", "run"):
        sec = data.pop(key, {})
        if key == "tariff":
            unknown = set(sec) - {"dem", "sup"}
            if unknown:
                raise ConfigurationError(f"[tariff] unknown keys: {sorted(unknown)}")
            if "dem" in sec:
                top["tariff_dem"] = float(sec["dem"])
            if "sup" in sec:
                top["tariff_sup"] = float(sec["sup"])
        else:
            allowed = {"controller_type", "rule_battery_discharge", "objective", "irradiance_forecast", "seed", "warmup_days", "initial"}
            unknown = set(sec) - allowed
            if unknown:
                raise ConfigurationError(f"[run] unknown keys: {sorted(unknown)}")
            top.update(sec)
    if "objective" in top:
        base = base.with_objective(top["objective"])
    kw = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            sec = data.pop(name)
            if name == "controller" and "N" in sec and "move_blocks" not in sec:
                c = base.controller
                opts = {k: sec.get(k, getattr(c, k)) for k in ("h", "soft_penalty", "tol", "max_iter")}
                unknown = set(sec) - {"N", *opts}
                if unknown:
                    raise ConfigurationError(f"[controller] unknown keys: {sorted(unknown)}")
                try:
                    kw[name] = ControllerConfig.with_horizon(int(sec["N"]), **opts)
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(f"[controller] {exc}") from exc
                continue
            kw[name] = _build(cls, sec, name, getattr(base, name))
    plant = base.plant
    plant_kw = {}
    for name, (attr, cls) in _PLANT_SECTIONS.items():
        if name in data:
            plant_kw[attr] = _build(cls, data.pop(name), name, getattr(plant, attr))
    if "plant" in data:
        plant = _build(PlantParameters, data.pop("plant"), "plant", plant)
    if plant_kw:
        plant = _build(PlantParameters, plant_kw, "plant", plant)
    kw["plant"] = plant
    if data:
        raise ConfigurationError(f"unknown config sections: {sorted(data)}")
    try:
        return replace(base, **kw, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode())
        else:
            data = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a table/object")
    return config_from_dict(data, base)


class ConfigWatcher:
    """Re-reads tuning and constraint sections when the file changes between control steps."""

    def __init__(self, path, cfg: RunConfig):
        self.path = Path(path)
        self.cfg = cfg
        self._mtime = self._stat()

    def _stat(self):
        try:
            return self.path.stat().st_mtime_ns
        except OSError:
            return None

    def poll(self) -> RunConfig:
        m = self._stat()
        if m is not None and m != self._mtime:
            self._mtime = m
            fresh = load_config(self.path)
            self.cfg = replace(self.cfg, tuning=fresh.tuning, constraints=fresh.constraints)
        return self.cfg
