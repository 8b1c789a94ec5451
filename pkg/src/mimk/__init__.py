"""Masked-image-modeling reconstruction of undersampled MRI k-space images.

Self-contained: a small float64 autodiff engine, ViT and Swin encoders with a
linear prediction head, a synthetic k-space data source, SSIM/RMSE metrics,
and a deterministic training CLI (``mimk``).
"""

from .backend import kernels
from .config import load_config, resolve_config
from .data import load_target, phantom_manifest, png_dir_manifest, split_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    MimkError,
    ShapeError,
    TrainingError,
)
from .metrics import rmse, ssim
from .model import ModelConfig, SimMIM, preset
from .tensor import Tape, Tensor, backward, check_gradients, no_grad
from .trainer import TrainRunConfig, evaluate_split, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "MimkError",
    "ModelConfig",
    "ShapeError",
    "SimMIM",
    "Tape",
    "Tensor",
    "TrainRunConfig",
    "TrainingError",
    "backward",
    "check_gradients",
    "evaluate_split",
    "kernels",
    "load_checkpoint",
    "load_config",
    "load_target",
    "no_grad",
    "phantom_manifest",
    "png_dir_manifest",
    "preset",
    "resolve_config",
    "rmse",
    "save_checkpoint",
    "split_dataset",
    "ssim",
    "train",
    "__version__",
]
