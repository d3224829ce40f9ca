"""From-scratch CNN engine for six-class pedestrian demographics."""

from .models import (CLASS_NAMES, Model, ModelConfig, build_custom_cnn,
                     build_model, build_resnet50, registry_lookup)

__all__ = [
    "CLASS_NAMES",
    "Model",
    "ModelConfig",
    "build_custom_cnn",
    "build_model",
    "build_resnet50",
    "registry_lookup",
]

__version__ = "0.1.0"
