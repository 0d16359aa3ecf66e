"""ON/OFF appliance-state classification from aggregate household power."""

from .exceptions import (ConfigurationError, DataError, FormatError, NilmError,
                         TrainingDivergenceError, UndefinedMetricError,
                         UnsupportedCombinationError)

__version__ = "0.1.0"

__all__ = [
    "NilmError", "FormatError", "DataError", "ConfigurationError", "UnsupportedCombinationError",
    "TrainingDivergenceError", "UndefinedMetricError", "__version__",
]
