"""Radio access network slicing for massive IoT and URLLC services."""

__version__ = "0.1.0"

from .api import SliceOrchestrator
from .config import SystemConfig, default_config, load_config_file, parse_config
from .errors import (ConfigError, ConstraintViolationError, InfeasibleRateError,
                     InternalConsistencyError, InvalidParameterError, RansliceError,
                     SimulationError, SliceInfeasibleError, SolverError)
from .orchestrator import algorithm1, run_slot

__all__ = [
    "SliceOrchestrator", "SystemConfig", "default_config", "load_config_file", "parse_config",
    "algorithm1", "run_slot", "RansliceError", "ConfigError", "ConstraintViolationError",
    "InfeasibleRateError", "InternalConsistencyError", "InvalidParameterError",
    "SimulationError", "SliceInfeasibleError", "SolverError",
]
