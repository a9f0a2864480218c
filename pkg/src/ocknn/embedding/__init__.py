"""Backbone management, one-class fine-tuning and embedding extraction."""

from .backbones import (
    ALEXNET_EMBEDDING_DIM,
    ALEXNET_IDENTIFIER,
    ALEXNET_RANDOM_IDENTIFIER,
    DEFAULT_INPUT_SHAPE,
    SYNTHETIC_IDENTIFIER,
    Backbone,
    BackboneSpec,
    SyntheticBackbone,
    backbone_for_stored_weights,
    load_backbone,
    synthetic_backbone,
)
from .training import (
    MulticlassNet,
    OneClassModel,
    OneClassStrategy,
    TrainingConfig,
    load_model_bundle,
    planned_iterations,
    save_model_bundle,
    train_multiclass,
    train_one_class,
)

__all__ = [
    "ALEXNET_EMBEDDING_DIM",
    "ALEXNET_IDENTIFIER",
    "ALEXNET_RANDOM_IDENTIFIER",
    "DEFAULT_INPUT_SHAPE",
    "SYNTHETIC_IDENTIFIER",
    "Backbone",
    "BackboneSpec",
    "SyntheticBackbone",
    "backbone_for_stored_weights",
    "load_backbone",
    "synthetic_backbone",
    "MulticlassNet",
    "OneClassModel",
    "OneClassStrategy",
    "TrainingConfig",
    "load_model_bundle",
    "planned_iterations",
    "save_model_bundle",
    "train_multiclass",
    "train_one_class",
]
