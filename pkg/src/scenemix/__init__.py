"""Multi-scenario CTR modelling: behavior attention pooling, scenario-aware
expert mixtures, exposure-debias tooling, and a synthetic biased-log world.
"""

from .errors import (
    ConfigError,
    ContractViolation,
    DataError,
    NumericFailure,
    UndefinedMetric,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractViolation",
    "DataError",
    "NumericFailure",
    "UndefinedMetric",
    "__version__",
]
