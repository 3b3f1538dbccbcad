"""Exception hierarchy shared across the package."""


class SchedulingError(Exception):
    """Base class for all idsched-specific errors."""


class ConfigError(SchedulingError):
    """Invalid experiment or instance configuration."""


class ResourceLimitError(SchedulingError):
    """A computation would exceed a configured size or enumeration cap."""


class StructuralError(SchedulingError):
    """An internal structural assumption failed (e.g. an undecidable state)."""


class EstimationError(SchedulingError):
    """A Monte Carlo estimate could not be formed (e.g. no completed cycles)."""
