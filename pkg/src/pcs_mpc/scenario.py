"""Exogenous scenario series: CSV I/O and a synthetic early-spring generator."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
import pandas as pd

from .errors import ConfigurationError
from .model import pv_power
from .plant import ScenarioSlice

CSV_COLUMNS = ("timestamp", "T_amb_C", "G_Wm2", "q_l_sh_kW", "q_l_dhw_kW", "p_l_kW")
STEP = timedelta(minutes=15)
STEPS_PER_DAY = 96

# EU 814/2013 tapping profile M: (hour of day, kWh), 5.845 kWh per day
DHW_PROFILE_M = (
    (7.00, 0.105), (7.083, 1.400), (7.50, 0.105), (8.017, 0.105), (8.25, 0.105), (8.50, 0.105),
    (8.75, 0.105), (9.00, 0.105), (9.50, 0.105), (10.50, 0.105), (11.50, 0.105), (11.75, 0.105),
    (12.75, 0.315), (14.50, 0.105), (15.50, 0.105), (16.50, 0.105), (18.00, 0.105), (18.25, 0.105),
    (18.50, 0.105), (19.00, 0.105), (20.50, 0.735), (21.25, 0.105), (21.50, 1.400),
)


@dataclass(eq=False)
class PlantScenario:
    """Outer-grid (15 min) input series; the first ``warmup_steps`` only fill the forecast history."""

    times: list
    T_amb: np.ndarray
    g: np.ndarray
    q_l_sh: np.ndarray
    q_l_dhw: np.ndarray
    p_l: np.ndarray
    warmup_steps: int = 0
    initial: dict = field(default_factory=lambda: {"T_sh": 30.0, "T_dhw": 55.0, "soc": 50.0})
    name: str = "scenario"

    def __post_init__(self):
        self.times = [pd.Timestamp(t).to_pydatetime() for t in self.times]
        n = len(self.times)
        for k in ("T_amb", "g", "q_l_sh", "q_l_dhw", "p_l"):
            a = np.asarray(getattr(self, k), dtype=float)
            if a.shape != (n,):
                raise ConfigurationError(f"scenario series {k} has length {a.size}, expected {n}")
            if not np.all(np.isfinite(a)):
                raise ConfigurationError(f"scenario series {k} contains non-finite values")
            if k != "T_amb" and np.any(a < 0):
                raise ConfigurationError(f"scenario series {k} must be non-negative")
            setattr(self, k, a)
        if any(b - a != STEP for a, b in zip(self.times, self.times[1:])):
            raise ConfigurationError("scenario timestamps must be consecutive 15 min steps")
        if not 0 <= self.warmup_steps < n:
            raise ConfigurationError("warmup_steps must be shorter than the scenario")

    def __len__(self) -> int:
        return len(self.times)

    def slice(self, k: int) -> ScenarioSlice:
        return ScenarioSlice(self.times[k], float(self.T_amb[k]), float(self.g[k]),
                             float(self.q_l_sh[k]), float(self.q_l_dhw[k]), float(self.p_l[k]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"timestamp": self.times, "T_amb_C": self.T_amb, "G_Wm2": self.g,
                             "q_l_sh_kW": self.q_l_sh, "q_l_dhw_kW": self.q_l_dhw, "p_l_kW": self.p_l})

    def with_loads(self, **series) -> "PlantScenario":
        kw = {k: getattr(self, k) for k in ("times", "T_amb", "g", "q_l_sh", "q_l_dhw", "p_l")}
        kw.update(series)
        return PlantScenario(**kw, warmup_steps=self.warmup_steps, initial=dict(self.initial), name=self.name)


def write_scenario_csv(sc: PlantScenario, path) -> None:
    sc.to_frame().to_csv(path, index=False, float_format="%.6g")


def read_scenario_csv(path, warmup_days: float = 0.0, initial: dict | None = None) -> PlantScenario:
    df = pd.read_csv(path, parse_dates=["timestamp"])
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigurationError(f"{path}: missing columns {missing}")
    kw = {} if initial is None else {"initial": dict(initial)}
    return PlantScenario(times=list(df["timestamp"]), T_amb=df["T_amb_C"].to_numpy(), g=df["G_Wm2"].to_numpy(),
                         q_l_sh=df["q_l_sh_kW"].to_numpy(), q_l_dhw=df["q_l_dhw_kW"].to_numpy(),
                         p_l=df["p_l_kW"].to_numpy(), warmup_steps=int(round(warmup_days * STEPS_PER_DAY)),
                         name=str(path), **kw)


def dhw_day_profile() -> np.ndarray:
    """Profile M binned to 96 quarter-hour steps, kW."""
    out = np.zeros(STEPS_PER_DAY)
    for hour, kwh in DHW_PROFILE_M:
        out[int(hour * 4)] += kwh / 0.25
    return out


def household_day_profile() -> np.ndarray:
    """Appliance load shape in kW, about 8 kWh per day."""
    hour = np.arange(STEPS_PER_DAY) / 4.0
    p = np.full(STEPS_PER_DAY, 0.15)
    p += 0.5 * ((hour >= 7) & (hour < 9))
    p += 0.6 * ((hour >= 12) & (hour < 13))
    p += 0.8 * ((hour >= 18) & (hour < 22))
    return p


def clear_sky(hour: np.ndarray, sunrise: float = 6.25, sunset: float = 18.25, peak: float = 800.0) -> np.ndarray:
    x = (hour - sunrise) / (sunset - sunrise)
    return np.where((x > 0) & (x < 1), peak * np.sin(np.pi * np.clip(x, 0, 1)) ** 1.3, 0.0)


def spring_scenario(seed: int = 0, days: int = 4, warmup_days: int = 7, start: datetime = datetime(2019, 3, 12),
                    mean_T_amb: float = 7.2, pv_kwh_per_day: float = 19.1, ua_kw_per_k: float = 0.12,
                    T_indoor: float = 21.0, y_pv: float = 6.0, mu: float = 0.9,
                    day_weather: tuple[float, ...] = (0.55, 0.6, 1.35, 1.5)) -> PlantScenario:
    """Synthetic four-day early-spring week with a warm-up history.

    Two dull days are followed by two sunny ones; irradiance is rescaled so the
    evaluated days average ``pv_kwh_per_day`` of PV generation.
    """
    rng = np.random.default_rng(seed)
    total = days + warmup_days
    n = total * STEPS_PER_DAY
    times = [start + k * STEP for k in range(n)]
    hour = (np.arange(n) % STEPS_PER_DAY) / 4.0
    day = np.arange(n) // STEPS_PER_DAY

    weather = np.empty(total)
    weather[:warmup_days] = rng.uniform(0.5, 1.5, warmup_days)
    w_eval = np.resize(np.asarray(day_weather, float), days)
    weather[warmup_days:] = w_eval
    # intra-day cloud variability, smoothed over an hour
    clouds = np.convolve(rng.uniform(0.7, 1.0, n), np.ones(4) / 4, mode="same")
    g = clear_sky(hour) * weather[day] * clouds
    g = np.minimum(g, 1000.0)
    eval_mask = day >= warmup_days
    pv_eval = pv_power(g[eval_mask], y_pv, mu).sum() * 0.25 / days
    g *= pv_kwh_per_day / pv_eval
    g = np.minimum(g, 1000.0)

    day_offset = rng.normal(0.0, 1.5, total)
    sunny = (weather - weather.mean()) * 2.0  # sunny days are warmer in the afternoon
    T_amb = mean_T_amb + 4.0 * np.sin(2 * np.pi * (hour - 9.0) / 24.0) + day_offset[day] + sunny[day] * (g > 0)
    T_amb += mean_T_amb - T_amb[eval_mask].mean()

    solar_gain = 0.6 * g / 1000.0
    q_l_sh = np.maximum(0.0, ua_kw_per_k * (T_indoor - T_amb) - solar_gain)
    q_l_dhw = np.tile(dhw_day_profile(), total)
    p_l = np.tile(household_day_profile(), total) * rng.uniform(0.85, 1.15, n)
    return PlantScenario(times, T_amb, g, q_l_sh, q_l_dhw, p_l, warmup_steps=warmup_days * STEPS_PER_DAY,
                         name=f"spring-{seed}")


def constant_scenario(hours: float, start: datetime = datetime(2019, 3, 22), T_amb: float = 7.0, g: float = 0.0,
                      q_l_sh: float = 0.0, q_l_dhw: float = 0.0, p_l: float = 0.0,
                      warmup_steps: int = 0, initial: dict | None = None) -> PlantScenario:
    n = int(round(hours * 4)) + warmup_steps
    ones = np.ones(n)
    kw = {} if initial is None else {"initial": dict(initial)}
    return PlantScenario([start + k * STEP for k in range(n)], T_amb * ones, g * ones, q_l_sh * ones,
                         q_l_dhw * ones, p_l * ones, warmup_steps=warmup_steps, name="constant", **kw)
