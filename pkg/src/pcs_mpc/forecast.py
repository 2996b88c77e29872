"""Persistence load forecasts and irradiance-based PV forecasts."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
import pandas as pd

from .errors import ForecastError
from .model import pv_power

STEP = timedelta(minutes=15)
WEEK = timedelta(days=7)
DAY = timedelta(days=1)
CAPACITY = 672  # seven days of 15 min samples


@dataclass(frozen=True)
class LoadSample:
    q_l_sh: float
    q_l_dhw: float
    p_l: float


class HistoryBuffer:
    """Ring buffer of load samples on the 15 min grid, at most seven days deep."""

    def __init__(self, capacity: int = CAPACITY, step: timedelta = STEP):
        self.capacity = capacity
        self.step = step
        self._times: deque[datetime] = deque()
        self._data: dict[datetime, LoadSample] = {}

    def __len__(self) -> int:
        return len(self._times)

    @property
    def latest(self) -> datetime | None:
        return self._times[-1] if self._times else None

    def record(self, timestamp: datetime, sample: LoadSample) -> "HistoryBuffer":
        ts = pd.Timestamp(timestamp).to_pydatetime()
        if ts.second or ts.microsecond or (ts.minute * 60) % int(self.step.total_seconds()):
            raise ForecastError(f"{ts} is not aligned to the {self.step} grid")
        if self._times and ts <= self._times[-1]:
            raise ForecastError(f"timestamp {ts} not after latest sample {self._times[-1]}")
        if len(self._times) == self.capacity:
            del self._data[self._times.popleft()]
        self._times.append(ts)
        self._data[ts] = sample
        return self

    def get(self, timestamp: datetime) -> LoadSample | None:
        return self._data.get(timestamp)

    def snapshot(self) -> list[tuple[datetime, LoadSample]]:
        return [(t, self._data[t]) for t in self._times]


@dataclass
class LoadForecast:
    q_l_sh: np.ndarray
    q_l_dhw: np.ndarray
    p_l: np.ndarray
    source_lag_days: np.ndarray  # 7 = regular persistence, 1..6 = fallback, 0 = no data
    degraded: bool


def forecast_loads(buf: HistoryBuffer, now: datetime, N: int) -> LoadForecast:
    """Step ``i`` repeats the sample recorded at ``now + i*h - 7 days``.

    Missing samples fall back to the most recent same-time-of-day sample of a
    previous day; without any such sample the step is zero and flagged.
    """
    now = pd.Timestamp(now).to_pydatetime()
    out = np.zeros((3, N))
    lag = np.zeros(N, dtype=int)
    for i in range(N):
        target = now + i * buf.step
        sample = buf.get(target - WEEK)
        if sample is not None:
            lag[i] = 7
        else:
            for d in range(1, 8):
                sample = buf.get(target - d * DAY)
                if sample is not None:
                    lag[i] = d
                    break
        if sample is not None:
            out[:, i] = (sample.q_l_sh, sample.q_l_dhw, sample.p_l)
    return LoadForecast(out[0], out[1], out[2], lag, degraded=bool(np.any(lag != 7)))


def forecast_pv(irradiance, y_pv: float, mu: float) -> np.ndarray:
    return np.maximum(0.0, np.atleast_1d(pv_power(np.asarray(irradiance, dtype=float), y_pv, mu)))


def load_irradiance_csv(path) -> pd.Series:
    """Irradiance forecast file with columns ``timestamp,g_Wm2``; returns a time-indexed series."""
    df = pd.read_csv(path, parse_dates=["timestamp"])
    if "g_Wm2" not in df:
        raise ForecastError(f"{path}: missing g_Wm2 column")
    return df.set_index("timestamp")["g_Wm2"].astype(float)


@dataclass
class ForecastBundle:
    """Per-step predictions over the horizon; all arrays have length N."""

    start: datetime
    q_l_sh: np.ndarray
    q_l_dhw: np.ndarray
    p_l: np.ndarray
    p_pv: np.ndarray
    cop_sh: np.ndarray
    cop_dhw: np.ndarray
    tariff_dem: np.ndarray
    tariff_sup: np.ndarray
    step: timedelta = STEP
    degraded: bool = False
    eta: float = 0.95
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        names = ("q_l_sh", "q_l_dhw", "p_l", "p_pv", "cop_sh", "cop_dhw", "tariff_dem", "tariff_sup")
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in names]
        n = arrays[0].size
        for k, a in zip(names, arrays):
            if a.shape != (n,):
                raise ForecastError(f"forecast array {k} has shape {a.shape}, expected ({n},)")
            setattr(self, k, a)
        for k in ("q_l_sh", "q_l_dhw", "p_l", "p_pv"):
            if np.any(getattr(self, k) < 0):
                raise ForecastError(f"negative {k} in forecast")

    @property
    def N(self) -> int:
        return self.q_l_sh.size

    def times(self, n: int | None = None) -> list[datetime]:
        n = self.N + 1 if n is None else n
        return [self.start + i * self.step for i in range(n)]
