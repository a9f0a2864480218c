"""The per-model nearest-neighbor decision rule, plus the two baselines.

Classification of a query image with C one-class models:

1. every model embeds the query, giving C query embeddings;
2. each query embedding is searched (exactly, by brute force) against the
   pooled reference set, producing one (min distance, neighbor class,
   neighbor row) score row — a C x 2 decision array plus provenance;
3. the row with the globally smallest distance wins and its neighbor class
   is the prediction. Ties break to the lowest row index.

The search scope is the pooled reference set by default; ``within_class``
restricts row i's search to class i's own reference rows, in which case the
neighbor class column is the class sequence by construction.

Baselines: a conventional multiclass softmax fine-tune, and a single
multiclass fine-tune whose embeddings feed a pooled k-NN instead of the
softmax head.
"""

from __future__ import annotations

import dataclasses
import enum
from collections import Counter
from typing import Mapping, Sequence

import numpy as np

from .embedding.backbones import Backbone
from .embedding.training import MulticlassNet, TrainingConfig, train_multiclass
from .errors import ConfigurationError, InputError, OcknnError
from .metrics import DistanceMetric, pairwise_distances
from .reference import ReferenceSet


class SearchScope(str, enum.Enum):
    POOLED = "pooled"
    WITHIN_CLASS = "within_class"


@dataclasses.dataclass(frozen=True)
class ClassifierConfig:
    metric: DistanceMetric = DistanceMetric.COSINE
    k_neighbors: int = 1
    search_scope: SearchScope = SearchScope.POOLED

    def __post_init__(self) -> None:
        object.__setattr__(self, "metric", DistanceMetric(self.metric))
        object.__setattr__(self, "search_scope", SearchScope(self.search_scope))
        if self.k_neighbors < 1:
            raise ConfigurationError(f"k_neighbors must be >= 1, got {self.k_neighbors}")


@dataclasses.dataclass(frozen=True)
class ScoreRow:
    """One query embedding's search result: min distance, neighbor class,
    and the reference row that produced it (provenance)."""

    min_distance: float
    neighbor_class: str
    neighbor_row: int


@dataclasses.dataclass(frozen=True)
class ScoreTable:
    """The C-row decision array, with the query config it was built under."""

    rows: tuple[ScoreRow, ...]
    metric: DistanceMetric
    k_neighbors: int
    search_scope: SearchScope

    def distances(self) -> np.ndarray:
        return np.array([row.min_distance for row in self.rows])


@dataclasses.dataclass(frozen=True)
class Prediction:
    predicted_class: str
    winning_row: int
    table: ScoreTable


def query_embeddings(models: Sequence, roi) -> np.ndarray:
    """Embed one query image with every model; returns a (C, dim) matrix."""
    if not models:
        raise InputError("at least one model is required")
    dims = {m.backbone.spec.embedding_dim for m in models}
    if len(dims) != 1:
        raise InputError(f"models disagree on embedding dimension: {sorted(dims)}")
    families = {m.backbone.spec.identifier for m in models}
    if len(families) != 1:
        raise ConfigurationError(f"models mix backbone families: {sorted(families)}")
    out = np.empty((len(models), dims.pop()), dtype=np.float32)
    for i, model in enumerate(models):
        try:
            out[i] = model.embed(roi)
        except OcknnError as exc:
            raise type(exc)(f"query embedding {i} (class '{model.class_id}'): {exc}") from exc
    return out


def _nearest_rows(
    query: np.ndarray,
    vectors: np.ndarray,
    labels: Sequence[str],
    metric: DistanceMetric,
    k: int,
    label_order: Mapping[str, int],
) -> tuple[float, str, int]:
    """Exact brute-force search; returns (distance, label, nearest row).

    k = 1: the minimum distance and the arg-min row (ties to the lowest
    row index). k > 1: the mean of the k smallest distances and the
    majority label among them; vote ties break by the smaller mean distance
    of the tied label's members, then by label order.
    """
    distances = pairwise_distances(query[None, :], vectors, metric)[0]
    if k == 1:
        row = int(np.argmin(distances))
        return float(distances[row]), labels[row], row
    order = np.lexsort((np.arange(len(distances)), distances))[:k]
    mean_distance = float(distances[order].mean())
    votes = Counter(labels[i] for i in order)
    per_label_mean = {
        label: float(np.mean([distances[i] for i in order if labels[i] == label]))
        for label in votes
    }
    winner = min(votes, key=lambda lbl: (-votes[lbl], per_label_mean[lbl], label_order[lbl]))
    return mean_distance, winner, int(order[0])


def nearest_neighbor(
    query,
    ref: ReferenceSet,
    metric: DistanceMetric | str = DistanceMetric.COSINE,
    k: int = 1,
) -> tuple[float, str]:
    """Exact nearest-neighbor search of one query over the reference set."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != ref.dim:
        raise InputError(f"query shape {q.shape} does not match reference dim {ref.dim}")
    if k > ref.row_count:
        raise InputError(f"k={k} exceeds the reference row count {ref.row_count}")
    label_order = {name: i for i, name in enumerate(ref.classes)}
    distance, label, _ = _nearest_rows(q, ref.vectors, ref.labels, DistanceMetric(metric), k, label_order)
    return distance, label


def build_score_db(
    queries: Sequence,
    ref: ReferenceSet,
    cfg: ClassifierConfig | None = None,
) -> ScoreTable:
    """Search each of the C query embeddings, one score row per model."""
    if cfg is None:
        cfg = ClassifierConfig()
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[0] != ref.class_count:
        raise InputError(
            f"expected {ref.class_count} query embeddings (one per class), got shape {queries.shape}"
        )
    if queries.shape[1] != ref.dim:
        raise InputError(f"query dim {queries.shape[1]} does not match reference dim {ref.dim}")
    if cfg.k_neighbors > ref.row_count:
        raise InputError(f"k={cfg.k_neighbors} exceeds the reference row count {ref.row_count}")
    label_order = {name: i for i, name in enumerate(ref.classes)}
    rows = []
    for i in range(ref.class_count):
        if cfg.search_scope is SearchScope.WITHIN_CLASS:
            indices = ref.rows_for_class(ref.classes[i])
            vectors = ref.vectors[indices]
            labels = [ref.labels[j] for j in indices]
        else:
            indices = np.arange(ref.row_count)
            vectors = ref.vectors
            labels = ref.labels
        try:
            distance, label, local_row = _nearest_rows(
                queries[i], vectors, labels, cfg.metric, min(cfg.k_neighbors, len(labels)), label_order
            )
        except OcknnError as exc:
            raise type(exc)(f"score row {i} (class '{ref.classes[i]}'): {exc}") from exc
        rows.append(ScoreRow(distance, label, int(indices[local_row])))
    return ScoreTable(tuple(rows), cfg.metric, cfg.k_neighbors, cfg.search_scope)


def decide(table: ScoreTable) -> Prediction:
    """Pick the row with the globally smallest distance (ties: lowest index)."""
    if not table.rows:
        raise InputError("cannot decide over an empty score table")
    winning = int(np.argmin(table.distances()))
    return Prediction(
        predicted_class=table.rows[winning].neighbor_class,
        winning_row=winning,
        table=table,
    )


def classify(models: Sequence, ref: ReferenceSet, roi, cfg: ClassifierConfig | None = None) -> Prediction:
    """Full pipeline: query embeddings -> score table -> decision."""
    model_classes = tuple(m.class_id for m in models)
    if model_classes != ref.classes:
        raise ConfigurationError(
            f"model class order {model_classes} does not match reference classes {ref.classes}"
        )
    return decide(build_score_db(query_embeddings(models, roi), ref, cfg))


def format_prediction(pred: Prediction) -> str:
    """Plain structured text: predicted class, winning row, then the full
    score table with columns min_distance, neighbor_class in row order."""
    lines = [
        f"predicted_class\t{pred.predicted_class}",
        f"winning_row\t{pred.winning_row}",
        "min_distance\tneighbor_class",
    ]
    for row in pred.table.rows:
        lines.append(f"{row.min_distance:.10g}\t{row.neighbor_class}")
    return "\n".join(lines) + "\n"


@dataclasses.dataclass
class MulticlassSoftmaxBaseline:
    """Conventional approach: one multiclass fine-tune, arg-max prediction."""

    net: MulticlassNet

    @property
    def classes(self) -> tuple[str, ...]:
        return self.net.classes

    @property
    def training_seconds(self) -> float:
        return self.net.training_seconds

    @property
    def iterations_run(self) -> int:
        return self.net.iterations_run

    def predict(self, roi) -> str:
        return self.net.predict(roi)


def baseline_multiclass_softmax(
    backbone: Backbone,
    train_images: Mapping[str, Sequence],
    cfg: TrainingConfig,
) -> MulticlassSoftmaxBaseline:
    """Fine-tune one softmax-headed backbone over all classes."""
    return MulticlassSoftmaxBaseline(train_multiclass(backbone, train_images, cfg))


@dataclasses.dataclass
class MulticlassKnnBaseline:
    """One multiclass fine-tune used as a feature extractor for pooled k-NN."""

    net: MulticlassNet
    vectors: np.ndarray
    labels: tuple[str, ...]
    classifier_cfg: ClassifierConfig

    @classmethod
    def from_net(
        cls,
        net: MulticlassNet,
        train_images: Mapping[str, Sequence],
        classifier_cfg: ClassifierConfig | None = None,
    ) -> "MulticlassKnnBaseline":
        """Build the pooled reference embeddings from an already-trained net."""
        blocks = []
        labels: list[str] = []
        for name in net.classes:
            images = list(train_images[name])
            blocks.append(net.embed_batch(images))
            labels.extend([name] * len(images))
        return cls(
            net=net,
            vectors=np.vstack(blocks),
            labels=tuple(labels),
            classifier_cfg=classifier_cfg or ClassifierConfig(),
        )

    @property
    def classes(self) -> tuple[str, ...]:
        return self.net.classes

    @property
    def training_seconds(self) -> float:
        # embedding the reference rows is not training; only the fine-tune counts
        return self.net.training_seconds

    @property
    def iterations_run(self) -> int:
        return self.net.iterations_run

    def predict(self, roi) -> str:
        query = self.net.embed(roi).astype(np.float64)
        label_order = {name: i for i, name in enumerate(self.net.classes)}
        k = min(self.classifier_cfg.k_neighbors, len(self.labels))
        _, label, _ = _nearest_rows(
            query, self.vectors, self.labels, self.classifier_cfg.metric, k, label_order
        )
        return label


def baseline_multiclass_knn(
    backbone: Backbone,
    train_images: Mapping[str, Sequence],
    cfg: TrainingConfig,
    classifier_cfg: ClassifierConfig | None = None,
) -> MulticlassKnnBaseline:
    """Fine-tune one multiclass backbone, then classify by k-NN over its
    embeddings of every training image. Training time is the fine-tune time."""
    net = train_multiclass(backbone, train_images, cfg)
    return MulticlassKnnBaseline.from_net(net, train_images, classifier_cfg)
