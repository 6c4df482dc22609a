"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class UndefinedMetric(ValueError):
    """A metric is mathematically undefined for the given inputs."""


class DataError(ValueError):
    """Input files are missing, malformed, or inconsistent."""


class ConfigError(ValueError):
    """A configuration file or override is invalid."""

class NumericFailure(RuntimeError):
    """Training produced a non-finite value."""
