"""AlexNet-backed embeddings via torchvision (optional dependency).

Identifiers:

``alexnet``
    torchvision AlexNet with ImageNet pretrained weights. Needs the weights
    to be downloadable or already cached; otherwise loading is a
    configuration error.

``alexnet-random``
    The same architecture with seeded random initialization. Useful where
    pretrained weights cannot be fetched: identical code path, real
    convolutional mechanics, fully offline.

Embeddings are the post-ReLU output of the second 4096-wide fully-connected
layer, extracted with the final classification layers removed. Inputs are
(H, W, 3) float arrays in [0, 1]; ImageNet mean/std normalization is applied
internally.
"""

from __future__ import annotations

import copy

import numpy as np

from ..errors import ConfigurationError, IntegrityError
from .backbones import (
    ALEXNET_EMBEDDING_DIM,
    ALEXNET_IDENTIFIER,
    ALEXNET_RANDOM_IDENTIFIER,
    Backbone,
    BackboneSpec,
)

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)
_EMBED_CHUNK = 32


def _import_torch():
    try:
        import torch
        import torchvision
    except ImportError as exc:
        raise ConfigurationError(
            "the alexnet backbone requires the optional torch extra "
            "(pip install 'ocknn[alexnet]')"
        ) from exc
    return torch, torchvision


class TorchAlexNetBackbone(Backbone):
    weights_filename = "weights.pt"

    def __init__(self, spec: BackboneSpec, load_pretrained: bool = True, _model=None):
        torch, torchvision = _import_torch()
        if spec.identifier not in (ALEXNET_IDENTIFIER, ALEXNET_RANDOM_IDENTIFIER):
            raise ConfigurationError(f"not an alexnet identifier: '{spec.identifier}'")
        if spec.embedding_dim != ALEXNET_EMBEDDING_DIM:
            raise IntegrityError(
                f"backbone '{spec.identifier}' emits {ALEXNET_EMBEDDING_DIM}-length vectors, "
                f"spec declares embedding_dim {spec.embedding_dim}"
            )
        super().__init__(spec)
        self._torch = torch
        if _model is not None:
            self._model = _model
        elif spec.identifier == ALEXNET_IDENTIFIER and load_pretrained:
            try:
                weights = torchvision.models.AlexNet_Weights.IMAGENET1K_V1
                self._model = torchvision.models.alexnet(weights=weights)
            except Exception as exc:
                raise ConfigurationError(
                    f"pretrained AlexNet weights are not available: {exc}"
                ) from exc
        else:
            torch.manual_seed(spec.seed)
            self._model = torchvision.models.alexnet(weights=None)
        self._model.eval()
        self._mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        self._std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)

    def _preprocess(self, images) -> "object":
        arrays = [self.conform(im) for im in images]
        batch = self._torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2)
        return (batch - self._mean) / self._std

    def _fc7(self, batch):
        x = self._model.features(batch)
        x = self._model.avgpool(x)
        x = self._torch.flatten(x, 1)
        for layer in list(self._model.classifier)[:6]:
            x = layer(x)
        return x

    def embed(self, image) -> np.ndarray:
        with self._torch.no_grad():
            out = self._fc7(self._preprocess([image]))
        return self._check_embedding(out[0].numpy().astype(np.float32))

    def embed_batch(self, images) -> np.ndarray:
        # batched forward; agrees with the scalar path within 1e-5
        out = np.empty((len(images), self.spec.embedding_dim), dtype=np.float32)
        with self._torch.no_grad():
            for start in range(0, len(images), _EMBED_CHUNK):
                chunk = list(images[start:start + _EMBED_CHUNK])
                emb = self._fc7(self._preprocess(chunk)).numpy().astype(np.float32)
                for offset in range(len(chunk)):
                    self._check_embedding(emb[offset])
                out[start:start + len(chunk)] = emb
        return out

    def clone(self) -> "TorchAlexNetBackbone":
        return TorchAlexNetBackbone(self.spec, _model=copy.deepcopy(self._model))

    def save_weights(self, path) -> None:
        self._torch.save(self._model.state_dict(), path)

    def load_weights(self, path) -> None:
        state = self._torch.load(path, map_location="cpu", weights_only=True)
        self._model.load_state_dict(state)
        self._model.eval()

    def one_class_objective(self, strategy, train_images, targets, val_images, cfg):
        from .training import OneClassStrategy

        if strategy is OneClassStrategy.POSITIVE_ONLY_LITERAL:
            return _TorchConstantLossObjective(self, train_images)
        if strategy is OneClassStrategy.BINARY_VS_OTHER_CLASSES:
            return _TorchBinaryObjective(self, train_images, targets, val_images, cfg)
        return _TorchCompactnessObjective(self, train_images, val_images, cfg)

    def multiclass_objective(self, train_images, label_ids, num_classes, cfg):
        return _TorchSoftmaxObjective(self, train_images, label_ids, num_classes, cfg)


class _TorchConstantLossObjective:
    """Data passes only; no gradient and no parameter update."""

    def __init__(self, backbone: TorchAlexNetBackbone, images):
        self._backbone = backbone
        self._inputs = backbone._preprocess(images) if len(images) else None

    def step(self, idx) -> float:
        torch = self._backbone._torch
        with torch.no_grad():
            self._backbone._fc7(self._inputs[torch.as_tensor(np.asarray(idx))])
        return 0.0

    def validation_loss(self) -> float:
        return 0.0

    def finish(self) -> None:
        self._backbone._model.eval()


class _TorchHeadObjective:
    """Shared scaffolding: preprocessed tensors, seeded head, SGD optimizer."""

    def __init__(self, backbone: TorchAlexNetBackbone, images, val_images, cfg, head):
        torch = backbone._torch
        self._backbone = backbone
        self._torch = torch
        torch.manual_seed(cfg.seed)
        self._inputs = backbone._preprocess(images)
        self._val_inputs = backbone._preprocess(val_images) if len(val_images) else None
        self.head = head
        params = list(backbone._model.parameters())
        if head is not None:
            params += list(head.parameters())
        self._optimizer = torch.optim.SGD(
            params,
            lr=cfg.initial_learn_rate,
            momentum=cfg.momentum,
            weight_decay=cfg.l2_regularization,
        )
        backbone._model.train()

    def _take(self, idx):
        return self._inputs[self._torch.as_tensor(np.asarray(idx))]

    def _optimize(self, loss) -> float:
        self._optimizer.zero_grad()
        loss.backward()
        self._optimizer.step()
        return float(loss.detach())

    def finish(self) -> None:
        self._backbone._model.eval()


class _TorchBinaryObjective(_TorchHeadObjective):
    def __init__(self, backbone, images, targets, val_images, cfg):
        torch = backbone._torch
        torch.manual_seed(cfg.seed)
        head = torch.nn.Linear(backbone.spec.embedding_dim, 1)
        super().__init__(backbone, images, val_images, cfg, head)
        self._targets = torch.as_tensor(np.asarray(targets, dtype=np.float32)).view(-1, 1)
        self._loss = torch.nn.BCEWithLogitsLoss()

    def step(self, idx) -> float:
        logits = self.head(self._backbone._fc7(self._take(idx)))
        loss = self._loss(logits, self._targets[self._torch.as_tensor(np.asarray(idx))])
        return self._optimize(loss)

    def validation_loss(self) -> float:
        torch = self._torch
        self._backbone._model.eval()
        try:
            with torch.no_grad():
                logits = self.head(self._backbone._fc7(self._val_inputs))
                target = torch.ones_like(logits)
                return float(self._loss(logits, target))
        finally:
            self._backbone._model.train()


class _TorchCompactnessObjective(_TorchHeadObjective):
    CENTER_MOMENTUM = 0.9

    def __init__(self, backbone, images, val_images, cfg):
        super().__init__(backbone, images, val_images, cfg, head=None)
        torch = self._torch
        self._backbone._model.eval()
        with torch.no_grad():
            self._center = self._backbone._fc7(self._inputs).mean(dim=0)
        self._backbone._model.train()

    def step(self, idx) -> float:
        torch = self._torch
        emb = self._backbone._fc7(self._take(idx))
        diff = emb - self._center
        loss = 0.5 * (diff * diff).sum(dim=1).mean()
        value = self._optimize(loss)
        with torch.no_grad():
            self._center = (
                self.CENTER_MOMENTUM * self._center
                + (1.0 - self.CENTER_MOMENTUM) * emb.detach().mean(dim=0)
            )
        return value

    def validation_loss(self) -> float:
        torch = self._torch
        self._backbone._model.eval()
        try:
            with torch.no_grad():
                diff = self._backbone._fc7(self._val_inputs) - self._center
                return float(0.5 * (diff * diff).sum(dim=1).mean())
        finally:
            self._backbone._model.train()


class _TorchSoftmaxObjective(_TorchHeadObjective):
    def __init__(self, backbone, images, label_ids, num_classes, cfg):
        torch = backbone._torch
        torch.manual_seed(cfg.seed)
        head = torch.nn.Linear(backbone.spec.embedding_dim, num_classes)
        super().__init__(backbone, images, [], cfg, head)
        self._labels = torch.as_tensor(np.asarray(label_ids, dtype=np.int64))
        self._loss = torch.nn.CrossEntropyLoss()

    def step(self, idx) -> float:
        logits = self.head(self._backbone._fc7(self._take(idx)))
        loss = self._loss(logits, self._labels[self._torch.as_tensor(np.asarray(idx))])
        return self._optimize(loss)

    def validation_loss(self) -> float:
        return 0.0

    def finish(self) -> None:
        super().finish()
        self.head = _TorchSoftmaxHead(self._backbone, self.head)


class _TorchSoftmaxHead:
    """numpy-facing wrapper so trained torch heads quack like SoftmaxHead."""

    def __init__(self, backbone: TorchAlexNetBackbone, module):
        self._module = module.eval()
        self._torch = backbone._torch

    def logits(self, backbone: TorchAlexNetBackbone, image) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            emb = backbone._fc7(backbone._preprocess([image]))
            return self._module(emb)[0].numpy().astype(np.float64)
