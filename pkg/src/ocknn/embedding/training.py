"""One-class and multiclass fine-tuning with iteration and wall-time accounting.

A one-class model is a backbone fine-tuned using a single class's training
images. The training loss is selectable because there is no canonical
objective for a single-class deep net:

``positive_only_literal`` (default)
    A constant-loss head: minibatches are passed through the network but no
    parameter is ever updated, so embeddings are preserved exactly. This is
    the only objective that uses strictly one class's data and it yields
    the fastest training.

``binary_vs_other_classes``
    One-vs-rest sigmoid head; requires negative images sampled from the
    other classes.

``compactness``
    Pulls the class's embeddings toward their running centroid; a real
    learning signal without any negative data.

Iteration accounting: ``iterations_run`` counts executed minibatch passes,
which equals ``epochs * ceil(effective_train_count / minibatch_size)``
unless validation-based early stopping fires first (it cannot with a single
epoch and the default validation frequency). ``effective_train_count`` is
the sample count after strategy expansion (binary adds negatives) and after
the validation holdout.

Wall time covers input preparation and optimizer steps; it never includes
backbone construction or weight downloads.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import time
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, InputError, TrainingError
from .backbones import Backbone, BackboneSpec, backbone_for_stored_weights

MODEL_MANIFEST_NAME = "manifest.json"


class OneClassStrategy(str, enum.Enum):
    POSITIVE_ONLY_LITERAL = "positive_only_literal"
    BINARY_VS_OTHER_CLASSES = "binary_vs_other_classes"
    COMPACTNESS = "compactness"


@dataclasses.dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and schedule settings (SGD with momentum)."""

    minibatch_size: int
    epochs: int
    initial_learn_rate: float = 0.01
    l2_regularization: float = 0.0001
    momentum: float = 0.9
    validation_frequency: int = 50
    validation_patience: int = 5
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.minibatch_size < 1:
            raise ConfigurationError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("initial_learn_rate", "l2_regularization", "momentum"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.validation_frequency < 1 or self.validation_patience < 1:
            raise ConfigurationError("validation_frequency and validation_patience must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in [0, 1)")


def planned_iterations(train_count: int, cfg: TrainingConfig) -> int:
    """epochs * ceil(train_count / minibatch_size)."""
    return cfg.epochs * math.ceil(train_count / cfg.minibatch_size)


def _run_loop(
    n_train: int,
    cfg: TrainingConfig,
    step: Callable[[np.ndarray], float],
    validation_loss: Callable[[], float] | None = None,
) -> tuple[int, bool]:
    """Seeded shuffle-and-batch loop; returns (iterations executed, early stopped).

    Validation runs every ``validation_frequency`` iterations; training
    stops once the loss has failed to improve ``validation_patience``
    consecutive checks.
    """
    rng = np.random.default_rng(cfg.seed)
    iterations = 0
    best = math.inf
    strikes = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.minibatch_size):
            loss = step(order[start:start + cfg.minibatch_size])
            if not math.isfinite(loss):
                raise TrainingError(f"loss became non-finite at iteration {iterations + 1}")
            iterations += 1
            if validation_loss is not None and iterations % cfg.validation_frequency == 0:
                value = validation_loss()
                if value < best:
                    best = value
                    strikes = 0
                else:
                    strikes += 1
                    if strikes >= cfg.validation_patience:
                        return iterations, True
    return iterations, False


@dataclasses.dataclass
class OneClassModel:
    """A backbone fine-tuned for one class, with training provenance."""

    class_id: str
    backbone: Backbone
    strategy: OneClassStrategy
    training_seconds: float
    iterations_run: int
    effective_train_count: int
    early_stopped: bool = False
    config: TrainingConfig | None = None

    @property
    def backbone_spec(self) -> BackboneSpec:
        return self.backbone.spec

    @property
    def embedding_dim(self) -> int:
        return self.backbone.spec.embedding_dim

    def embed(self, image) -> np.ndarray:
        return self.backbone.embed(image)

    def embed_batch(self, images) -> np.ndarray:
        return self.backbone.embed_batch(images)


def _validation_holdout(images: Sequence, cfg: TrainingConfig) -> tuple[list, list]:
    """Split positives into (train, validation) per the holdout fraction."""
    n = len(images)
    n_val = int(round(cfg.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    if n_val <= 0:
        return list(images), []
    rng = np.random.default_rng([cfg.seed, 0])
    chosen = set(rng.choice(n, size=n_val, replace=False).tolist())
    train = [im for i, im in enumerate(images) if i not in chosen]
    val = [im for i, im in enumerate(images) if i in chosen]
    return train, val


def train_one_class(
    backbone: Backbone,
    images: Sequence,
    class_id: str,
    strategy: OneClassStrategy | str = OneClassStrategy.POSITIVE_ONLY_LITERAL,
    cfg: TrainingConfig | None = None,
    negatives: Sequence | None = None,
) -> OneClassModel:
    """Fine-tune a copy of ``backbone`` on one class's images.

    ``negatives`` is required exactly when the strategy is
    binary_vs_other_classes. The returned model records wall time,
    executed iterations and the effective train count.
    """
    strategy = OneClassStrategy(strategy)
    if cfg is None:
        cfg = TrainingConfig(minibatch_size=min(32, max(1, len(images))), epochs=1)
    if len(images) == 0:
        raise InputError(f"no training images supplied for class '{class_id}'")
    if strategy is OneClassStrategy.BINARY_VS_OTHER_CLASSES:
        if not negatives:
            raise ConfigurationError("binary_vs_other_classes requires negative images")
    elif negatives:
        raise ConfigurationError(f"negatives are only valid for binary_vs_other_classes, not {strategy.value}")

    started = time.perf_counter()
    net = backbone.clone()

    if strategy is OneClassStrategy.POSITIVE_ONLY_LITERAL:
        train_images: list = list(images)
        val_images: list = []
        targets = None
    else:
        positives, val_images = _validation_holdout(images, cfg)
        if strategy is OneClassStrategy.BINARY_VS_OTHER_CLASSES:
            train_images = positives + list(negatives)
            targets = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
        else:
            train_images = positives
            targets = None

    expanded = len(images) + (len(negatives) if negatives else 0)
    if cfg.minibatch_size > expanded:
        raise ConfigurationError(
            f"minibatch_size {cfg.minibatch_size} exceeds the expanded training-set size {expanded}"
        )

    objective = net.one_class_objective(strategy, train_images, targets, val_images, cfg)
    val_fn = objective.validation_loss if val_images else None
    iterations, early = _run_loop(len(train_images), cfg, objective.step, val_fn)
    objective.finish()
    seconds = time.perf_counter() - started
    return OneClassModel(
        class_id=class_id,
        backbone=net,
        strategy=strategy,
        training_seconds=seconds,
        iterations_run=iterations,
        effective_train_count=len(train_images),
        early_stopped=early,
        config=cfg,
    )


@dataclasses.dataclass
class MulticlassNet:
    """A backbone fine-tuned with a C-way softmax head."""

    backbone: Backbone
    head: object
    classes: tuple[str, ...]
    training_seconds: float
    iterations_run: int
    effective_train_count: int
    config: TrainingConfig | None = None

    def logits(self, image) -> np.ndarray:
        return self.head.logits(self.backbone, image)

    def predict(self, image) -> str:
        return self.classes[int(np.argmax(self.logits(image)))]

    def embed(self, image) -> np.ndarray:
        return self.backbone.embed(image)

    def embed_batch(self, images) -> np.ndarray:
        return self.backbone.embed_batch(images)


def train_multiclass(
    backbone: Backbone,
    images_by_class: Mapping[str, Sequence],
    cfg: TrainingConfig,
) -> MulticlassNet:
    """Fine-tune a copy of ``backbone`` with a softmax head over all classes.

    Trains on every image (no validation holdout), so iterations_run is
    exactly epochs * ceil(total_train / minibatch_size).
    """
    classes = tuple(images_by_class.keys())
    if len(classes) < 2:
        raise ConfigurationError("multiclass training requires at least two classes")
    images: list = []
    label_ids: list[int] = []
    for index, name in enumerate(classes):
        class_images = list(images_by_class[name])
        if not class_images:
            raise InputError(f"class '{name}' has no training images")
        images.extend(class_images)
        label_ids.extend([index] * len(class_images))
    if cfg.minibatch_size > len(images):
        raise ConfigurationError(
            f"minibatch_size {cfg.minibatch_size} exceeds the training-set size {len(images)}"
        )

    started = time.perf_counter()
    net = backbone.clone()
    objective = net.multiclass_objective(images, label_ids, len(classes), cfg)
    iterations, _ = _run_loop(len(images), cfg, objective.step, None)
    objective.finish()
    seconds = time.perf_counter() - started
    return MulticlassNet(
        backbone=net,
        head=objective.head,
        classes=classes,
        training_seconds=seconds,
        iterations_run=iterations,
        effective_train_count=len(images),
        config=cfg,
    )


def save_model_bundle(model: OneClassModel, directory) -> Path:
    """Persist a one-class model: opaque weights blob + plain-text manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model.backbone.save_weights(directory / model.backbone.weights_filename)
    spec = model.backbone.spec
    manifest = {
        "class_id": model.class_id,
        "strategy": model.strategy.value,
        "backbone": {
            "identifier": spec.identifier,
            "embedding_dim": spec.embedding_dim,
            "input_shape": list(spec.input_shape),
            "seed": spec.seed,
        },
        "training_seconds": model.training_seconds,
        "iterations_run": model.iterations_run,
        "effective_train_count": model.effective_train_count,
        "early_stopped": model.early_stopped,
        "training_config": dataclasses.asdict(model.config) if model.config else None,
    }
    (directory / MODEL_MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_model_bundle(directory) -> OneClassModel:
    """Load a model bundle written by save_model_bundle."""
    directory = Path(directory)
    manifest_path = directory / MODEL_MANIFEST_NAME
    if not manifest_path.is_file():
        raise InputError(f"model bundle {directory} has no {MODEL_MANIFEST_NAME}")
    manifest = json.loads(manifest_path.read_text())
    spec = BackboneSpec(
        identifier=manifest["backbone"]["identifier"],
        embedding_dim=int(manifest["backbone"]["embedding_dim"]),
        input_shape=tuple(manifest["backbone"]["input_shape"]),
        seed=int(manifest["backbone"]["seed"]),
    )
    backbone = backbone_for_stored_weights(spec)
    weights_path = directory / backbone.weights_filename
    if not weights_path.is_file():
        raise InputError(f"model bundle {directory} has no weights blob {backbone.weights_filename}")
    backbone.load_weights(weights_path)
    cfg_dict = manifest.get("training_config")
    cfg = TrainingConfig(**cfg_dict) if cfg_dict else None
    return OneClassModel(
        class_id=manifest["class_id"],
        backbone=backbone,
        strategy=OneClassStrategy(manifest["strategy"]),
        training_seconds=float(manifest["training_seconds"]),
        iterations_run=int(manifest["iterations_run"]),
        effective_train_count=int(manifest.get("effective_train_count", 0)),
        early_stopped=bool(manifest.get("early_stopped", False)),
        config=cfg,
    )
