"""Multiclass classification from an ensemble of per-class one-class feature
extractors and an exact nearest-neighbor decision rule over their pooled
training embeddings, with conventional baselines and a benchmark runner."""

from .classifier import (
    ClassifierConfig,
    MulticlassKnnBaseline,
    MulticlassSoftmaxBaseline,
    Prediction,
    ScoreRow,
    ScoreTable,
    SearchScope,
    baseline_multiclass_knn,
    baseline_multiclass_softmax,
    build_score_db,
    classify,
    decide,
    format_prediction,
    nearest_neighbor,
    query_embeddings,
)
from .datasets import (
    DatasetManifest,
    Split,
    SplitSpec,
    generate_synthetic_dataset,
    load_image,
    make_split,
    parse_split_listing,
    scan_directory,
    select_classes,
)
from .embedding import (
    Backbone,
    BackboneSpec,
    MulticlassNet,
    OneClassModel,
    OneClassStrategy,
    SyntheticBackbone,
    TrainingConfig,
    load_backbone,
    load_model_bundle,
    planned_iterations,
    save_model_bundle,
    synthetic_backbone,
    train_multiclass,
    train_one_class,
)
from .errors import (
    ConfigurationError,
    CorruptionError,
    DatasetError,
    DegenerateVectorError,
    InputError,
    IntegrityError,
    OcknnError,
    TrainingError,
)
from .metrics import (
    DistanceMetric,
    correlation_distance,
    cosine_distance,
    pairwise_distances,
    rank_transform,
    spearman_distance,
)
from .reference import (
    ReferenceSet,
    build_reference_set,
    load_reference_set,
    save_reference_set,
)

__version__ = "0.1.0"
