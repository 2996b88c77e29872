"""Linear control-oriented model of the storage system and the algebraic couplings.

State ``x = [E_SH, E_DHW, E_BLD, E_B]`` (kWh), input ``u`` the eight energy
flows in ``FLOW_NAMES`` (kW), disturbance ``d = [q_L,SH, q_L,DHW]`` (kW).
The beta coefficients carry the 15 min sampling interval: they map a kW set
point held for one step to a kWh change of the state.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import ConfigurationError

FLOW_NAMES = ("q_hp_sh", "q_hp_dhw", "q_hr", "q_sh", "p_b_ch", "p_b_dis", "p_g_dem", "p_g_sup")
STATE_NAMES = ("e_sh", "e_dhw", "e_bld", "e_b")
N_FLOWS = len(FLOW_NAMES)
N_STATES = len(STATE_NAMES)

RHO_W = 1.0  # kg/l
CP_W = 4.18  # kJ/(kg K)


@dataclass(frozen=True)
class SystemState:
    e_sh: float = 0.0
    e_dhw: float = 0.0
    e_bld: float = 0.0
    e_b: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, x) -> "SystemState":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class EnergyFlowSetpoints:
    q_hp_sh: float = 0.0
    q_hp_dhw: float = 0.0
    q_hr: float = 0.0
    q_sh: float = 0.0
    p_b_ch: float = 0.0
    p_b_dis: float = 0.0
    p_g_dem: float = 0.0
    p_g_sup: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, u) -> "EnergyFlowSetpoints":
        return cls(*(float(v) for v in u))


@dataclass(frozen=True)
class DisturbanceVector:
    q_l_sh: float = 0.0
    q_l_dhw: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.q_l_sh, self.q_l_dhw])


@dataclass(frozen=True)
class ElectricContext:
    p_l: float = 0.0
    p_pv: float = 0.0
    eta: float = 0.95
    cop_sh: float = 4.0
    cop_dhw: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ConfigurationError(f"eta must lie in (0, 1], got {self.eta}")
        if self.cop_sh < 1.0 or self.cop_dhw < 1.0:
            raise ConfigurationError("COP values below 1 are not physical")


@dataclass(frozen=True)
class ModelParameters:
    """Loss and efficiency coefficients; defaults are the identified test-bed values."""

    alpha1: float = 0.99949
    alpha2: float = 0.9979
    alpha3: float = 1.0
    alpha4: float = 0.9991
    nu: float = 0.003
    beta1: float = 0.275
    beta2: float = 0.298
    beta3: float = 0.192
    beta4: float = 0.248
    beta5: float = 0.339
    beta6: float = 0.298
    beta7: float = 0.223
    beta8: float = 0.205

    def validate(self) -> None:
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} = {v} outside (0, 1]")
        if self.nu < 0:
            raise ConfigurationError("nu must be non-negative")
        if self.alpha2 - self.nu <= 0:
            raise ConfigurationError("alpha2 - nu must be positive")
        for f in fields(self):
            if f.name.startswith("beta") and getattr(self, f.name) <= 0:
                raise ConfigurationError(f"{f.name} must be positive")


@dataclass(frozen=True, eq=False)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray


def build_matrices(params: ModelParameters) -> StateSpace:
    params.validate()
    p = params
    A = np.diag([p.alpha1, p.alpha2 - p.nu, p.alpha3, p.alpha4])
    A[0, 1] = p.nu
    B = np.zeros((N_STATES, N_FLOWS))
    B[0, 0] = p.beta1
    B[0, 3] = -p.beta2
    B[1, 1] = p.beta3
    B[1, 2] = p.beta4
    B[2, 3] = p.beta6
    B[3, 4] = p.beta7
    B[3, 5] = -p.beta8
    E = np.zeros((N_STATES, 2))
    E[1, 1] = -p.beta5
    E[2, 0] = -p.beta6
    return StateSpace(A=A, B=B, E=E, C=np.eye(N_STATES))


def step(x: SystemState, u: EnergyFlowSetpoints, d: DisturbanceVector, ss: StateSpace) -> SystemState:
    return SystemState.from_array(ss.A @ x.as_array() + ss.B @ u.as_array() + ss.E @ d.as_array())


def electric_demand_hp(q_hp_sh: float, q_hp_dhw: float, ctx: ElectricContext) -> float:
    return q_hp_sh / ctx.cop_sh + q_hp_dhw / ctx.cop_dhw


def pv_power(g, y_pv: float, mu: float):
    """PV output (kW) from global irradiance in W/m²; works element-wise on arrays."""
    out = np.asarray(g, dtype=float) / 1000.0 * y_pv * mu
    return float(out) if out.ndim == 0 else out


def node_residual(u: EnergyFlowSetpoints, ctx: ElectricContext) -> float:
    """Power into the inverter node minus power out of it, kW. Zero when balanced."""
    p_hp = electric_demand_hp(u.q_hp_sh, u.q_hp_dhw, ctx)
    p_hr = u.q_hr
    return (u.p_g_dem + ctx.eta * u.p_b_dis + ctx.eta * ctx.p_pv
            - ctx.p_l - ctx.eta * u.p_b_ch - u.p_g_sup - p_hp - p_hr)


def battery_energy(soc: float, e_max: float) -> float:
    return soc / 100.0 * e_max


def load_heat(vdot: float, T_dem: float, T_sup: float) -> float:
    """Heat drawn by a water-side consumer, kW."""
    return RHO_W * vdot * CP_W * (T_dem - T_sup)


# --- identification -------------------------------------------------------------

# (row, regressors) of the structured least-squares refit: column indices into [x, u, d]
_STRUCTURE = {
    0: (0, 1, N_STATES + 0, N_STATES + 3),
    1: (1, N_STATES + 1, N_STATES + 2, N_STATES + N_FLOWS + 1),
    2: (2, N_STATES + 3, N_STATES + N_FLOWS + 0),
    3: (3, N_STATES + 4, N_STATES + 5),
}


def fit_state_space(X: np.ndarray, U: np.ndarray, D: np.ndarray) -> StateSpace:
    """Least-squares refit of the model with the fixed sparsity pattern.

    ``X`` has shape (T + 1, 4); ``U`` (T, 8); ``D`` (T, 2). The building row
    shares one coefficient between q_SH and q_L,SH as in the printed matrices.
    """
    X, U, D = (np.asarray(a, dtype=float) for a in (X, U, D))
    Z = np.hstack([X[:-1], U, D])
    A = np.zeros((N_STATES, N_STATES))
    B = np.zeros((N_STATES, N_FLOWS))
    E = np.zeros((N_STATES, 2))
    for row, cols in _STRUCTURE.items():
        y = X[1:, row]
        if row == 2:
            reg = np.column_stack([Z[:, 2], Z[:, N_STATES + 3] - Z[:, N_STATES + N_FLOWS]])
            coef, *_ = np.linalg.lstsq(reg, y, rcond=None)
            A[2, 2] = coef[0]
            B[2, 3] = coef[1]
            E[2, 0] = -coef[1]
            continue
        coef, *_ = np.linalg.lstsq(Z[:, cols], y, rcond=None)
        for c, v in zip(cols, coef):
            if c < N_STATES:
                A[row, c] = v
            elif c < N_STATES + N_FLOWS:
                B[row, c - N_STATES] = v
            else:
                E[row, c - N_STATES - N_FLOWS] = v
    return StateSpace(A=A, B=B, E=E, C=np.eye(N_STATES))


def simulate(ss: StateSpace, x0: np.ndarray, U: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Free-run simulation; returns (T + 1, 4) states."""
    X = np.empty((len(U) + 1, N_STATES))
    X[0] = x0
    for k in range(len(U)):
        X[k + 1] = ss.A @ X[k] + ss.B @ U[k] + ss.E @ D[k]
    return X


def goodness_of_fit(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Normalised-RMSE fit in percent: 100 (1 - |y - y_hat| / |y - mean(y)|)."""
    y, y_hat = np.asarray(y, float), np.asarray(y_hat, float)
    denom = np.linalg.norm(y - y.mean())
    if denom == 0:
        return 100.0 if np.allclose(y, y_hat) else -np.inf
    return 100.0 * (1.0 - np.linalg.norm(y - y_hat) / denom)
