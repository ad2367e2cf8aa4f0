"""Dimension-wise sampling-rate control for wireless XR teleoperation, trained
in simulation with latent density-ratio correction toward a real domain."""

from .config import Experiment
from .errors import (CheckpointError, ConfigError, DegenerateError, InvalidArgument,
                     NumericalError, QueryError)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "Experiment", "BACKEND", "CheckpointError", "ConfigError", "DegenerateError",
    "InvalidArgument", "NumericalError", "QueryError", "__version__",
]
