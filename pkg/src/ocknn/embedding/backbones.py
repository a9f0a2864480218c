"""Backbone specs, the deterministic synthetic backbone, and backbone loading.

A backbone maps an image to a fixed-length embedding vector. Two families
are built in:

``synthetic``
    A seeded random projection over block-averaged pixels. Deterministic,
    dependency-free and fast; the workhorse for tests and desk-scale runs.
    Construction recipe (fixed, so it can be re-derived independently):
    the conformed (H, W, 3) image in [0, 1] is block-averaged to a
    ``min(16, H) x min(16, W)`` grid (block edges at ``floor(i * H / g)``),
    flattened row-major into a feature vector of length p, and multiplied
    by a projection matrix drawn once as
    ``default_rng(seed).normal(0, 1/sqrt(p), (p, embedding_dim))``.

``alexnet`` / ``alexnet-random``
    Penultimate-FC-layer embeddings (4096-d) from torchvision's AlexNet;
    see :mod:`ocknn.embedding.alexnet`. Requires the optional torch extra.

Images passed to ``embed`` are (H, W, 3) float arrays in [0, 1]; anything
not matching the backbone's input shape is bilinearly resized first.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from ..datasets import resize_image
from ..errors import ConfigurationError, InputError, IntegrityError, OcknnError

DEFAULT_INPUT_SHAPE = (227, 227, 3)
SYNTHETIC_IDENTIFIER = "synthetic"
ALEXNET_IDENTIFIER = "alexnet"
ALEXNET_RANDOM_IDENTIFIER = "alexnet-random"
ALEXNET_EMBEDDING_DIM = 4096

_SYNTHETIC_GRID_LIMIT = 16


@dataclasses.dataclass(frozen=True)
class BackboneSpec:
    """Names a backbone and pins the contract its embeddings must satisfy."""

    identifier: str
    embedding_dim: int
    input_shape: tuple[int, int, int] = DEFAULT_INPUT_SHAPE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ConfigurationError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        shape = tuple(int(v) for v in self.input_shape)
        if len(shape) != 3 or shape[2] != 3 or shape[0] < 1 or shape[1] < 1:
            raise ConfigurationError(f"input_shape must be (height, width, 3), got {self.input_shape}")
        object.__setattr__(self, "input_shape", shape)


class Backbone:
    """Base class: embedding extraction plus fine-tuning hooks.

    A backbone instance owns its weights; ``clone()`` yields an independent
    copy so fine-tuning never mutates the pretrained original.
    """

    weights_filename = "weights.npz"

    def __init__(self, spec: BackboneSpec):
        self.spec = spec

    def conform(self, image) -> np.ndarray:
        """Validate an image array and resize it to the backbone's input shape."""
        arr = np.asarray(image, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InputError(f"expected an (H, W, 3) image array, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InputError("image array has a zero dimension")
        if not np.all(np.isfinite(arr)):
            raise InputError("image array contains non-finite values")
        height, width, _ = self.spec.input_shape
        if arr.shape[:2] != (height, width):
            arr = resize_image(arr, height, width)
        return arr

    def _check_embedding(self, vec: np.ndarray) -> np.ndarray:
        if vec.shape != (self.spec.embedding_dim,):
            raise IntegrityError(
                f"backbone '{self.spec.identifier}' emitted {vec.shape[0]} values, "
                f"spec declares embedding_dim {self.spec.embedding_dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise IntegrityError(f"backbone '{self.spec.identifier}' emitted non-finite values")
        return vec

    def embed(self, image) -> np.ndarray:
        raise NotImplementedError

    def embed_batch(self, images) -> np.ndarray:
        """Embed a sequence of images into an (n, dim) float32 matrix.

        Elementwise equal to mapping embed; per-element failures are
        re-raised with the offending index.
        """
        out = np.empty((len(images), self.spec.embedding_dim), dtype=np.float32)
        for i, image in enumerate(images):
            try:
                out[i] = self.embed(image)
            except OcknnError as exc:
                raise type(exc)(f"image {i}: {exc}") from exc
        return out

    def clone(self) -> "Backbone":
        raise NotImplementedError

    def save_weights(self, path) -> None:
        raise NotImplementedError

    def load_weights(self, path) -> None:
        raise NotImplementedError

    def one_class_objective(self, strategy, train_images, targets, val_images, cfg):
        raise NotImplementedError

    def multiclass_objective(self, train_images, label_ids, num_classes, cfg):
        raise NotImplementedError


def _block_mean(arr: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Average an (H, W, 3) array over a grid_h x grid_w grid of blocks.

    Block edges are floor(i * H / grid)), so every pixel belongs to exactly
    one block and contributes to the output.
    """
    height, width, _ = arr.shape
    r_edges = (np.arange(grid_h + 1) * height) // grid_h
    c_edges = (np.arange(grid_w + 1) * width) // grid_w
    rows = np.add.reduceat(arr.astype(np.float64), r_edges[:-1], axis=0)
    cells = np.add.reduceat(rows, c_edges[:-1], axis=1)
    counts = np.outer(np.diff(r_edges), np.diff(c_edges)).astype(np.float64)
    return cells / counts[:, :, None]


class _SgdMomentum:
    """Classic SGD with momentum and L2 penalty, updating arrays in place:
    v <- momentum*v - lr*(grad + l2*param); param <- param + v."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float, l2: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.l2 = l2
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        for param, vel, grad in zip(self.params, self.velocity, grads):
            vel *= self.momentum
            vel -= self.lr * (grad + self.l2 * param)
            param += vel


class _ConstantLossObjective:
    """The positive-only objective: every minibatch is passed through the
    network but the loss is constant, so no parameter is ever updated (not
    even via L2 decay) and the backbone stays bit-identical."""

    def __init__(self, backbone: "SyntheticBackbone", feats: np.ndarray):
        self._backbone = backbone
        self._feats = feats

    def step(self, idx: np.ndarray) -> float:
        _ = self._feats[idx] @ self._backbone._projection
        return 0.0

    def validation_loss(self) -> float:
        return 0.0

    def finish(self) -> None:
        pass


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bce(prob: np.ndarray, target: np.ndarray) -> float:
    p = np.clip(prob, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))


class _BinaryObjective:
    """One-vs-rest sigmoid head trained end to end through the projection."""

    def __init__(self, backbone, train_feats, targets, val_feats, cfg):
        self._backbone = backbone
        self._feats = train_feats
        self._targets = np.asarray(targets, dtype=np.float64)
        self._val_feats = val_feats
        rng = np.random.default_rng([cfg.seed, 1])
        dim = backbone.spec.embedding_dim
        self._w = rng.normal(0.0, 0.01, size=dim)
        self._b = np.zeros(1)
        self._sgd = _SgdMomentum(
            [backbone._projection, self._w, self._b],
            cfg.initial_learn_rate, cfg.momentum, cfg.l2_regularization,
        )

    def step(self, idx: np.ndarray) -> float:
        feats = self._feats[idx]
        target = self._targets[idx]
        emb = feats @ self._backbone._projection
        prob = _sigmoid(emb @ self._w + self._b[0])
        loss = _bce(prob, target)
        dz = (prob - target) / len(idx)
        d_w = emb.T @ dz
        d_b = np.array([dz.sum()])
        d_emb = np.outer(dz, self._w)
        d_proj = feats.T @ d_emb
        self._sgd.step([d_proj, d_w, d_b])
        return loss

    def validation_loss(self) -> float:
        emb = self._val_feats @ self._backbone._projection
        prob = _sigmoid(emb @ self._w + self._b[0])
        return _bce(prob, np.ones(len(prob)))

    def finish(self) -> None:
        pass


class _CompactnessObjective:
    """Positive-only objective pulling embeddings toward a running centroid."""

    CENTER_MOMENTUM = 0.9

    def __init__(self, backbone, train_feats, val_feats, cfg):
        self._backbone = backbone
        self._feats = train_feats
        self._val_feats = val_feats
        self._center = (train_feats @ backbone._projection).mean(axis=0)
        self._sgd = _SgdMomentum(
            [backbone._projection],
            cfg.initial_learn_rate, cfg.momentum, cfg.l2_regularization,
        )

    def step(self, idx: np.ndarray) -> float:
        feats = self._feats[idx]
        emb = feats @ self._backbone._projection
        diff = emb - self._center
        loss = 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
        d_emb = diff / len(idx)
        d_proj = feats.T @ d_emb
        self._sgd.step([d_proj])
        self._center = self.CENTER_MOMENTUM * self._center + (1.0 - self.CENTER_MOMENTUM) * emb.mean(axis=0)
        return loss

    def validation_loss(self) -> float:
        emb = self._val_feats @ self._backbone._projection
        diff = emb - self._center
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))

    def finish(self) -> None:
        pass


class _SoftmaxObjective:
    """C-way softmax head trained end to end through the projection."""

    def __init__(self, backbone, train_feats, label_ids, num_classes, cfg):
        self._backbone = backbone
        self._feats = train_feats
        self._labels = np.asarray(label_ids, dtype=np.intp)
        self._num_classes = num_classes
        rng = np.random.default_rng([cfg.seed, 2])
        dim = backbone.spec.embedding_dim
        self._w = rng.normal(0.0, 0.01, size=(dim, num_classes))
        self._b = np.zeros(num_classes)
        self._sgd = _SgdMomentum(
            [backbone._projection, self._w, self._b],
            cfg.initial_learn_rate, cfg.momentum, cfg.l2_regularization,
        )

    def step(self, idx: np.ndarray) -> float:
        feats = self._feats[idx]
        labels = self._labels[idx]
        emb = feats @ self._backbone._projection
        logits = emb @ self._w + self._b
        logits -= logits.max(axis=1, keepdims=True)
        expz = np.exp(logits)
        prob = expz / expz.sum(axis=1, keepdims=True)
        m = len(idx)
        loss = float(-np.mean(np.log(np.clip(prob[np.arange(m), labels], 1e-12, None))))
        d_logits = prob
        d_logits[np.arange(m), labels] -= 1.0
        d_logits /= m
        d_w = emb.T @ d_logits
        d_b = d_logits.sum(axis=0)
        d_emb = d_logits @ self._w.T
        d_proj = feats.T @ d_emb
        self._sgd.step([d_proj, d_w, d_b])
        return loss

    def validation_loss(self) -> float:
        return 0.0

    def finish(self) -> None:
        pass

    @property
    def head(self) -> "SoftmaxHead":
        return SoftmaxHead(self._w, self._b)


class SoftmaxHead:
    """Trained classification head over a backbone's embeddings."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = weights
        self.bias = bias

    def logits(self, backbone: Backbone, image) -> np.ndarray:
        return backbone.embed(image).astype(np.float64) @ self.weights + self.bias


class SyntheticBackbone(Backbone):
    """Seeded random projection over block-averaged pixels (see module docs).

    One pixel's change always reaches the embedding: block averaging covers
    every pixel and the projection matrix has no zero entries for any
    practical seed, so distinct inputs generically map to distinct outputs.
    """

    def __init__(self, spec: BackboneSpec):
        if spec.embedding_dim < 2:
            raise ConfigurationError("synthetic backbone requires embedding_dim >= 2")
        super().__init__(spec)
        height, width, _ = spec.input_shape
        self._grid_h = min(_SYNTHETIC_GRID_LIMIT, height)
        self._grid_w = min(_SYNTHETIC_GRID_LIMIT, width)
        p = self._grid_h * self._grid_w * 3
        rng = np.random.default_rng(spec.seed)
        self._projection = rng.normal(0.0, 1.0 / np.sqrt(p), size=(p, spec.embedding_dim))

    @property
    def feature_length(self) -> int:
        return self._projection.shape[0]

    def _features(self, image) -> np.ndarray:
        arr = self.conform(image)
        return _block_mean(arr, self._grid_h, self._grid_w).ravel()

    def embed(self, image) -> np.ndarray:
        emb = (self._features(image) @ self._projection).astype(np.float32)
        return self._check_embedding(emb)

    def clone(self) -> "SyntheticBackbone":
        other = SyntheticBackbone(self.spec)
        other._projection = self._projection.copy()
        return other

    def save_weights(self, path) -> None:
        np.savez(path, projection=self._projection)

    def load_weights(self, path) -> None:
        with np.load(path) as data:
            projection = np.asarray(data["projection"], dtype=np.float64)
        if projection.shape != self._projection.shape:
            raise IntegrityError(
                f"stored projection shape {projection.shape} does not match "
                f"backbone shape {self._projection.shape}"
            )
        self._projection = projection

    def _feature_matrix(self, images) -> np.ndarray:
        if len(images) == 0:
            return np.empty((0, self.feature_length))
        return np.stack([self._features(im) for im in images])

    def one_class_objective(self, strategy, train_images, targets, val_images, cfg):
        from .training import OneClassStrategy  # local import avoids a cycle

        feats = self._feature_matrix(train_images)
        val_feats = self._feature_matrix(val_images)
        if strategy is OneClassStrategy.POSITIVE_ONLY_LITERAL:
            return _ConstantLossObjective(self, feats)
        if strategy is OneClassStrategy.BINARY_VS_OTHER_CLASSES:
            return _BinaryObjective(self, feats, targets, val_feats, cfg)
        return _CompactnessObjective(self, feats, val_feats, cfg)

    def multiclass_objective(self, train_images, label_ids, num_classes, cfg):
        feats = self._feature_matrix(train_images)
        return _SoftmaxObjective(self, feats, label_ids, num_classes, cfg)


def synthetic_backbone(seed: int, dim: int, input_shape: tuple[int, int, int] = DEFAULT_INPUT_SHAPE) -> SyntheticBackbone:
    """Deterministic, seed-reproducible image-to-vector map for tests and runs
    without a pretrained network."""
    return SyntheticBackbone(BackboneSpec(SYNTHETIC_IDENTIFIER, dim, input_shape, seed))


def load_backbone(spec: BackboneSpec) -> Backbone:
    """Resolve a BackboneSpec to a ready backbone.

    Unknown identifiers are a configuration error; an identifier whose
    network emits a different dimension than the spec declares is an
    integrity error.
    """
    if spec.identifier == SYNTHETIC_IDENTIFIER:
        return SyntheticBackbone(spec)
    if spec.identifier in (ALEXNET_IDENTIFIER, ALEXNET_RANDOM_IDENTIFIER):
        from .alexnet import TorchAlexNetBackbone

        return TorchAlexNetBackbone(spec)
    raise ConfigurationError(f"unknown backbone identifier '{spec.identifier}'")


def backbone_for_stored_weights(spec: BackboneSpec) -> Backbone:
    """Build the architecture for ``spec`` without resolving pretrained
    weights (they will be overwritten by a stored blob)."""
    if spec.identifier == SYNTHETIC_IDENTIFIER:
        return SyntheticBackbone(spec)
    if spec.identifier in (ALEXNET_IDENTIFIER, ALEXNET_RANDOM_IDENTIFIER):
        from .alexnet import TorchAlexNetBackbone

        return TorchAlexNetBackbone(spec, load_pretrained=False)
    raise ConfigurationError(f"unknown backbone identifier '{spec.identifier}'")
