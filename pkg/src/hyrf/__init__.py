"""Hybrid radiance fields in numpy.

Explicit Gaussians carry position plus a small explicit residual for color,
scale and opacity; two decoupled multi-resolution hash fields with tiny
decoders predict geometry and view-dependent color. Rendering is
differentiable tile-based splatting with a background sphere shaded by the
radiance field.
"""

from .camera import Camera, look_at
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigurationError,
    ContractViolation,
    CorruptStreamError,
    DataError,
    DivergenceError,
    HyrfError,
    InvalidInputError,
    TrainingError,
)
from .geometry import Aabb
from .model import HybridModel, ModelConfig
from .train import TrainConfig, Trainer, fit

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "Camera",
    "ConfigurationError",
    "ContractViolation",
    "CorruptStreamError",
    "DataError",
    "DivergenceError",
    "HybridModel",
    "HyrfError",
    "InvalidInputError",
    "ModelConfig",
    "TrainConfig",
    "Trainer",
    "TrainingError",
    "fit",
    "load_checkpoint",
    "look_at",
    "save_checkpoint",
]
