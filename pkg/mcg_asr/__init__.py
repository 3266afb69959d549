"""Multiple-confidence-gate front-end jointly trained with a Conformer-CTC recognizer."""

from .config import Config, RunConfig, desk_preset, load_run_config, full_preset
from .errors import (ConfigError, CtcError, DataError, GraphError, McgAsrError, NumericError, ShapeError,
                     SignalError)

__version__ = "0.1.0"

__all__ = [
    "Config", "RunConfig", "desk_preset", "full_preset", "load_run_config", "McgAsrError",
    "ShapeError", "GraphError", "ConfigError", "NumericError", "CtcError", "SignalError", "DataError",
]
