"""Supervisory MPC for a PV / battery / heat-pump system with phase-change-slurry storage.

Modules
-------
pcs        slurry thermodynamics, stored-energy estimation, hysteresis branches
model      linear control model and electric node balance
forecast   persistence load forecasts, PV forecast, forecast bundle
ocp        optimal control problem assembly and condensing
qp         dense primal-dual interior-point QP solver
dispatch   rule layer turning the QP optimum into realizable set points
plant      nonlinear ground-truth plant simulator
harness    closed-loop runner, rule baseline and KPIs
"""
from .errors import (
    BuildError,
    ConfigurationError,
    DegenerateMaterialError,
    ExtrapolationWarning,
    ForecastError,
    InvalidMeasurementError,
    PcsMpcError,
    SimulationFault,
)

__version__ = "0.1.0"

__all__ = [
    "BuildError",
    "ConfigurationError",
    "DegenerateMaterialError",
    "ExtrapolationWarning",
    "ForecastError",
    "InvalidMeasurementError",
    "PcsMpcError",
    "SimulationFault",
    "__version__",
]
