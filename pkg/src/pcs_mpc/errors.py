class PcsMpcError(Exception):
    """Base class for all package errors."""


class InvalidMeasurementError(PcsMpcError, ValueError):
    pass


class DegenerateMaterialError(PcsMpcError, ValueError):
    pass


class ConfigurationError(PcsMpcError, ValueError):
    pass


class BuildError(PcsMpcError, ValueError):
    """Raised when an optimal control problem cannot be assembled."""


class ForecastError(PcsMpcError, ValueError):
    pass


class SimulationFault(PcsMpcError, RuntimeError):
    """Plant left its safe operating envelope; the run is aborted."""


class ExtrapolationWarning(UserWarning):
    """A tabulated curve or enthalpy branch was evaluated outside its domain and saturated."""
