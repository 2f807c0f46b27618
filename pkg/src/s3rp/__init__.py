"""Self-supervised probabilistic super-resolution and forecasting of
2D advection-diffusion fields."""

from . import advect, config, data, diffops, evaluation, model, objective, pipeline, train, windgen
from .errors import (
    ConfigError,
    DataError,
    EvalError,
    ModelError,
    NumericError,
    S3RPError,
    StabilityError,
)
from .grid import GridSpec

__version__ = "0.1.0"

__all__ = [
    "advect",
    "config",
    "data",
    "diffops",
    "evaluation",
    "model",
    "objective",
    "pipeline",
    "train",
    "windgen",
    "GridSpec",
    "S3RPError",
    "ConfigError",
    "DataError",
    "EvalError",
    "ModelError",
    "NumericError",
    "StabilityError",
]
