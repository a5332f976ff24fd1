"""Differentiable compute core, extractor/decoder models, and training."""

from .backend import backend_name
from .models import ArchConfig, JointModel, PerRoiExtractor, SharedExtractor, StdfmriDecoder
from .training import (
    Adam,
    TrainConfig,
    TrainResult,
    curves_to_csv,
    load_checkpoint,
    save_checkpoint,
    stack_features,
    train_decoder,
)

__all__ = [
    "Adam",
    "ArchConfig",
    "JointModel",
    "PerRoiExtractor",
    "SharedExtractor",
    "StdfmriDecoder",
    "TrainConfig",
    "TrainResult",
    "backend_name",
    "curves_to_csv",
    "load_checkpoint",
    "save_checkpoint",
    "stack_features",
    "train_decoder",
]
