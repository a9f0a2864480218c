"""Experiment runner: trains the selected approaches, measures wall time,
evaluates accuracy and renders comparison reports.

Three approaches are comparable:

``proposed``
    One one-class model per class feeding the pooled nearest-neighbor
    decision rule. Its training time is reported as the serial-equivalent
    sum of the per-net times (training here is serial, so the measured wall
    time of the phase coincides; both are reported).

``conventional``
    A single multiclass softmax fine-tune, arg-max prediction.

``multiclass_knn``
    The same multiclass fine-tune used as a feature extractor for a pooled
    k-NN. When both baselines are selected with identical training configs
    the fine-tune runs once and is shared, so both report the same time.

Reports embed an environment note because absolute seconds are
hardware-specific; accuracies, counts and iteration numbers are the
reproducible content. ``to_dict(include_measured_times=False)`` serializes
only that reproducible content, which is byte-stable across reruns with the
same seed.
"""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import shutil
import tempfile
import time
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .classifier import (
    ClassifierConfig,
    MulticlassKnnBaseline,
    MulticlassSoftmaxBaseline,
    classify,
)
from .datasets import (
    DatasetManifest,
    Split,
    SplitSpec,
    generate_synthetic_dataset,
    load_image,
    make_split,
    scan_directory,
    select_classes,
)
from .embedding.backbones import BackboneSpec, load_backbone
from .embedding.training import (
    OneClassStrategy,
    TrainingConfig,
    train_multiclass,
    train_one_class,
)
from .errors import ConfigurationError, InputError
from .metrics import DistanceMetric
from .reference import build_reference_set, save_reference_set

VALID_APPROACHES = ("proposed", "conventional", "multiclass_knn")

SPLIT_LISTING_NAME = "split_listing.txt"
REFERENCE_SET_NAME = "reference_set.ocr1"
REPORT_TEXT_NAME = "report.txt"
REPORT_JSON_NAME = "report.json"
REPORT_STABLE_JSON_NAME = "report.deterministic.json"


@dataclasses.dataclass(frozen=True)
class SyntheticDataSpec:
    """Parameters for the generated archetype dataset."""

    class_count: int = 4
    images_per_class: int = 24
    image_size: tuple[int, int] = (64, 64)


@dataclasses.dataclass
class ExperimentConfig:
    split: SplitSpec
    backbone: BackboneSpec
    dataset_root: Path | None = None
    synthetic: SyntheticDataSpec | None = None
    select_class_count: int | None = None
    select_per_class_count: int | None = None
    approaches: tuple[str, ...] = VALID_APPROACHES
    classifier: ClassifierConfig = dataclasses.field(default_factory=ClassifierConfig)
    one_class_strategy: OneClassStrategy = OneClassStrategy.POSITIVE_ONLY_LITERAL
    one_class_training: TrainingConfig | None = None
    multiclass_training: TrainingConfig | None = None
    output_path: Path | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        self.approaches = tuple(self.approaches)
        if not self.approaches:
            raise ConfigurationError("at least one approach must be selected")
        unknown = [a for a in self.approaches if a not in VALID_APPROACHES]
        if unknown:
            raise ConfigurationError(f"unknown approaches {unknown}; valid: {list(VALID_APPROACHES)}")
        if (self.dataset_root is None) == (self.synthetic is None):
            raise ConfigurationError("exactly one of dataset_root / synthetic must be set")
        self.one_class_strategy = OneClassStrategy(self.one_class_strategy)
        if self.dataset_root is not None:
            self.dataset_root = Path(self.dataset_root)
        if self.output_path is not None:
            self.output_path = Path(self.output_path)


@dataclasses.dataclass
class ApproachReport:
    """One approach's accuracy, per-class tallies and training accounting."""

    name: str
    accuracy: float
    per_class_correct: dict[str, int]
    per_class_test_counts: dict[str, int]
    training_seconds: float
    training_wall_seconds: float
    iterations_per_net: dict[str, int]
    iterations_total: int
    samples_per_epoch_per_net: dict[str, int]
    per_query_seconds: float

    @property
    def correct_total(self) -> int:
        return sum(self.per_class_correct.values())

    @property
    def test_total(self) -> int:
        return sum(self.per_class_test_counts.values())

    def recomputed_accuracy(self) -> float:
        return 100.0 * self.correct_total / self.test_total


@dataclasses.dataclass
class ExperimentReport:
    classes: tuple[str, ...]
    approaches: list[ApproachReport]
    config: dict
    environment: str

    def approach(self, name: str) -> ApproachReport:
        for entry in self.approaches:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def to_dict(self, include_measured_times: bool = True) -> dict:
        """Structured report. Measured seconds live in a separate section so
        the deterministic content can be serialized on its own."""
        approaches = []
        for entry in self.approaches:
            row = {
                "name": entry.name,
                "accuracy_percent": entry.accuracy,
                "per_class_correct": dict(entry.per_class_correct),
                "per_class_test_counts": dict(entry.per_class_test_counts),
                "iterations_per_net": dict(entry.iterations_per_net),
                "iterations_total": entry.iterations_total,
                "samples_per_epoch_per_net": dict(entry.samples_per_epoch_per_net),
            }
            if include_measured_times:
                row["measured"] = {
                    "training_seconds": entry.training_seconds,
                    "training_wall_seconds": entry.training_wall_seconds,
                    "per_query_seconds": entry.per_query_seconds,
                }
            approaches.append(row)
        out = {
            "classes": list(self.classes),
            "approaches": approaches,
            "config": self.config,
        }
        if include_measured_times:
            out["environment"] = self.environment
        return out


def environment_note() -> str:
    accelerator = "gpu visible via nvidia-smi" if shutil.which("nvidia-smi") else "cpu only"
    return (
        f"{platform.platform()}; python {platform.python_version()}; "
        f"{os.cpu_count()} cpus; {accelerator}"
    )


def _jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(value).items()}
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


def _config_echo(cfg: ExperimentConfig) -> dict:
    return _jsonable(cfg)


@dataclasses.dataclass
class _PreparedData:
    manifest: DatasetManifest
    split: Split
    backbone: object
    train_arrays: dict[str, list[np.ndarray]]
    test_items: list[tuple[str, np.ndarray]]


def _prepare(cfg: ExperimentConfig, workdir: Path) -> _PreparedData:
    if cfg.synthetic is not None:
        manifest = generate_synthetic_dataset(
            workdir / "synthetic_data",
            class_count=cfg.synthetic.class_count,
            images_per_class=cfg.synthetic.images_per_class,
            image_size=cfg.synthetic.image_size,
            seed=cfg.seed,
        )
    else:
        manifest = scan_directory(cfg.dataset_root)
    if cfg.select_class_count is not None or cfg.select_per_class_count is not None:
        manifest = select_classes(
            manifest, cfg.select_class_count, cfg.select_per_class_count, seed=cfg.seed
        )
    split = make_split(manifest, cfg.split)
    backbone = load_backbone(cfg.backbone)
    shape = backbone.spec.input_shape
    train_arrays = {
        name: [load_image(p, shape) for p in split.train[name]] for name in split.classes
    }
    test_items = [
        (name, load_image(p, shape)) for name in split.classes for p in split.test[name]
    ]
    return _PreparedData(manifest, split, backbone, train_arrays, test_items)


def _default_one_class_training(prep: _PreparedData, seed: int) -> TrainingConfig:
    smallest = min(len(v) for v in prep.train_arrays.values())
    return TrainingConfig(minibatch_size=min(32, smallest), epochs=1, seed=seed)


def _default_multiclass_training(prep: _PreparedData, seed: int) -> TrainingConfig:
    total = sum(len(v) for v in prep.train_arrays.values())
    return TrainingConfig(minibatch_size=min(32, total), epochs=1, seed=seed)


def _evaluate(
    predict: Callable[[np.ndarray], str],
    test_items: Sequence[tuple[str, np.ndarray]],
    classes: Sequence[str],
) -> tuple[dict[str, int], dict[str, int], float]:
    correct = {name: 0 for name in classes}
    totals = {name: 0 for name in classes}
    started = time.perf_counter()
    for truth, image in test_items:
        totals[truth] += 1
        if predict(image) == truth:
            correct[truth] += 1
    per_query = (time.perf_counter() - started) / max(1, len(test_items))
    return correct, totals, per_query


def _negatives_for(class_index: int, prep: _PreparedData, seed: int) -> list[np.ndarray]:
    """Sample as many negatives as the class has positives, evenly from the
    other classes."""
    class_id = prep.split.classes[class_index]
    n_positive = len(prep.train_arrays[class_id])
    others = [name for name in prep.split.classes if name != class_id]
    rng = np.random.default_rng([seed, class_index])
    pool = [(name, idx) for name in others for idx in range(len(prep.train_arrays[name]))]
    chosen = rng.choice(len(pool), size=min(n_positive, len(pool)), replace=False)
    return [prep.train_arrays[pool[i][0]][pool[i][1]] for i in sorted(chosen)]


def _train_proposed(cfg: ExperimentConfig, prep: _PreparedData, training: TrainingConfig):
    models = []
    wall_started = time.perf_counter()
    for index, name in enumerate(prep.split.classes):
        negatives = None
        if cfg.one_class_strategy is OneClassStrategy.BINARY_VS_OTHER_CLASSES:
            negatives = _negatives_for(index, prep, cfg.seed)
        models.append(
            train_one_class(
                prep.backbone,
                prep.train_arrays[name],
                name,
                cfg.one_class_strategy,
                training,
                negatives=negatives,
            )
        )
    wall = time.perf_counter() - wall_started
    reference = build_reference_set(models, prep.train_arrays)
    reference.intended_metric = cfg.classifier.metric.value
    return models, reference, wall


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Train every selected approach, evaluate the shared test set and
    assemble the comparison report (written to cfg.output_path if set)."""
    with tempfile.TemporaryDirectory(prefix="ocknn-run-") as tmp:
        workdir = cfg.output_path or Path(tmp)
        workdir.mkdir(parents=True, exist_ok=True)
        prep = _prepare(cfg, workdir)
        one_class_training = cfg.one_class_training or _default_one_class_training(prep, cfg.seed)
        multiclass_training = cfg.multiclass_training or _default_multiclass_training(prep, cfg.seed)

        approaches: list[ApproachReport] = []
        shared_multiclass = None
        reference = None

        for approach in cfg.approaches:
            if approach == "proposed":
                models, reference, wall = _train_proposed(cfg, prep, one_class_training)
                correct, totals, per_query = _evaluate(
                    lambda image: classify(models, reference, image, cfg.classifier).predicted_class,
                    prep.test_items,
                    prep.split.classes,
                )
                approaches.append(ApproachReport(
                    name=approach,
                    accuracy=100.0 * sum(correct.values()) / sum(totals.values()),
                    per_class_correct=correct,
                    per_class_test_counts=totals,
                    training_seconds=sum(m.training_seconds for m in models),
                    training_wall_seconds=wall,
                    iterations_per_net={m.class_id: m.iterations_run for m in models},
                    iterations_total=sum(m.iterations_run for m in models),
                    samples_per_epoch_per_net={m.class_id: m.effective_train_count for m in models},
                    per_query_seconds=per_query,
                ))
            else:
                if shared_multiclass is None:
                    started = time.perf_counter()
                    net = train_multiclass(prep.backbone, prep.train_arrays, multiclass_training)
                    shared_multiclass = (net, time.perf_counter() - started)
                net, wall = shared_multiclass
                if approach == "conventional":
                    baseline = MulticlassSoftmaxBaseline(net)
                else:
                    baseline = MulticlassKnnBaseline.from_net(net, prep.train_arrays, cfg.classifier)
                correct, totals, per_query = _evaluate(
                    baseline.predict, prep.test_items, prep.split.classes
                )
                approaches.append(ApproachReport(
                    name=approach,
                    accuracy=100.0 * sum(correct.values()) / sum(totals.values()),
                    per_class_correct=correct,
                    per_class_test_counts=totals,
                    training_seconds=net.training_seconds,
                    training_wall_seconds=wall,
                    iterations_per_net={"multiclass": net.iterations_run},
                    iterations_total=net.iterations_run,
                    samples_per_epoch_per_net={"multiclass": net.effective_train_count},
                    per_query_seconds=per_query,
                ))

        report = ExperimentReport(
            classes=prep.split.classes,
            approaches=approaches,
            config=_config_echo(cfg),
            environment=environment_note(),
        )

        if cfg.output_path is not None:
            out = cfg.output_path
            (out / SPLIT_LISTING_NAME).write_text(prep.split.to_listing())
            if reference is not None:
                save_reference_set(reference, out / REFERENCE_SET_NAME)
            (out / REPORT_TEXT_NAME).write_text(render_report(report))
            (out / REPORT_JSON_NAME).write_text(render_report(report, fmt="json"))
            (out / REPORT_STABLE_JSON_NAME).write_text(
                render_report(report, fmt="json", include_measured_times=False)
            )
        return report


@dataclasses.dataclass
class AblationReport:
    rows: list[tuple[str, float]]
    classes: tuple[str, ...]
    config: dict

    def accuracy(self, metric: str) -> float:
        for name, value in self.rows:
            if name == metric:
                return value
        raise KeyError(metric)


def metric_ablation(cfg: ExperimentConfig, metrics: Sequence[DistanceMetric | str]) -> AblationReport:
    """Accuracy of the proposed classifier per metric over one training run.

    The models and reference set are trained once; only the query-time
    metric varies between rows.
    """
    if not metrics:
        raise ConfigurationError("at least one metric is required")
    metrics = [DistanceMetric(m) for m in metrics]
    with tempfile.TemporaryDirectory(prefix="ocknn-ablate-") as tmp:
        workdir = cfg.output_path or Path(tmp)
        workdir.mkdir(parents=True, exist_ok=True)
        prep = _prepare(cfg, workdir)
        training = cfg.one_class_training or _default_one_class_training(prep, cfg.seed)
        models, reference, _ = _train_proposed(cfg, prep, training)
        rows = []
        for metric in metrics:
            query_cfg = ClassifierConfig(
                metric=metric,
                k_neighbors=cfg.classifier.k_neighbors,
                search_scope=cfg.classifier.search_scope,
            )
            correct, totals, _ = _evaluate(
                lambda image: classify(models, reference, image, query_cfg).predicted_class,
                prep.test_items,
                prep.split.classes,
            )
            rows.append((metric.value, 100.0 * sum(correct.values()) / sum(totals.values())))
        return AblationReport(rows=rows, classes=prep.split.classes, config=_config_echo(cfg))


def render_report(report: ExperimentReport, fmt: str = "table", include_measured_times: bool = True) -> str:
    """Deterministic text for a report: a plain table mirroring the
    comparison columns (per-class correct counts, accuracy, training time),
    or the structured JSON document with identical content."""
    if fmt == "json":
        return json.dumps(report.to_dict(include_measured_times), indent=2, sort_keys=True) + "\n"
    if fmt != "table":
        raise ConfigurationError(f"unknown report format '{fmt}'; use 'table' or 'json'")

    classes = list(report.classes)
    headers = ["approach"] + [f"correct[{c}]" for c in classes] + ["accuracy_%"]
    if include_measured_times:
        headers += ["train_s", "train_wall_s", "per_query_ms"]
    headers += ["iterations"]
    rows = [headers]
    test_counts = report.approaches[0].per_class_test_counts if report.approaches else {}
    rows.append(
        ["test size"] + [str(test_counts.get(c, 0)) for c in classes] + ["-"]
        + (["-", "-", "-"] if include_measured_times else []) + ["-"]
    )
    for entry in report.approaches:
        row = [entry.name]
        row += [str(entry.per_class_correct.get(c, 0)) for c in classes]
        row.append(f"{entry.accuracy:.1f}")
        if include_measured_times:
            row.append(f"{entry.training_seconds:.2f}")
            row.append(f"{entry.training_wall_seconds:.2f}")
            row.append(f"{entry.per_query_seconds * 1000.0:.2f}")
        row.append(str(entry.iterations_total))
        rows.append(row)

    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    if include_measured_times:
        lines.append("")
        lines.append(f"environment: {report.environment}")
    return "\n".join(lines) + "\n"


def render_ablation(report: AblationReport) -> str:
    lines = ["metric      accuracy_%"]
    for name, value in report.rows:
        lines.append(f"{name:<10}  {value:.1f}")
    return "\n".join(lines) + "\n"


def load_experiment_config(path, seed_override: int | None = None) -> ExperimentConfig:
    """Parse a declarative JSON config file into an ExperimentConfig.

    Component seeds (split, backbone, training) default to the top-level
    seed; ``seed_override`` replaces every seed, so one flag controls all
    randomness.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    return experiment_config_from_dict(raw, seed_override)


def experiment_config_from_dict(raw: Mapping, seed_override: int | None = None) -> ExperimentConfig:
    raw = dict(raw)
    seed = int(raw.get("seed", 0)) if seed_override is None else seed_override

    split_raw = dict(raw.get("split") or {})
    if seed_override is not None or "seed" not in split_raw:
        split_raw["seed"] = seed
    split = SplitSpec(
        train_count=split_raw.get("train_count"),
        train_fraction=split_raw.get("train_fraction"),
        seed=int(split_raw["seed"]),
    )

    backbone_raw = dict(raw.get("backbone") or {})
    if not backbone_raw.get("identifier"):
        raise ConfigurationError("config is missing backbone.identifier")
    if seed_override is not None or "seed" not in backbone_raw:
        backbone_raw["seed"] = seed
    backbone = BackboneSpec(
        identifier=backbone_raw["identifier"],
        embedding_dim=int(backbone_raw.get("embedding_dim", 0) or 0),
        input_shape=tuple(backbone_raw.get("input_shape", (227, 227, 3))),
        seed=int(backbone_raw["seed"]),
    )

    synthetic = None
    if raw.get("synthetic") is not None:
        syn = dict(raw["synthetic"])
        synthetic = SyntheticDataSpec(
            class_count=int(syn.get("class_count", 4)),
            images_per_class=int(syn.get("images_per_class", 24)),
            image_size=tuple(syn.get("image_size", (64, 64))),
        )

    classifier_raw = dict(raw.get("classifier") or {})
    classifier_cfg = ClassifierConfig(
        metric=classifier_raw.get("metric", "cosine"),
        k_neighbors=int(classifier_raw.get("k_neighbors", 1)),
        search_scope=classifier_raw.get("search_scope", "pooled"),
    )

    def training_from(key: str) -> TrainingConfig | None:
        block = raw.get(key)
        if block is None:
            return None
        block = dict(block)
        if seed_override is not None or "seed" not in block:
            block["seed"] = seed
        return TrainingConfig(**block)

    select_raw = dict(raw.get("select") or {})
    return ExperimentConfig(
        split=split,
        backbone=backbone,
        dataset_root=raw.get("dataset_root"),
        synthetic=synthetic,
        select_class_count=select_raw.get("class_count"),
        select_per_class_count=select_raw.get("per_class_count"),
        approaches=tuple(raw.get("approaches", VALID_APPROACHES)),
        classifier=classifier_cfg,
        one_class_strategy=raw.get("one_class_strategy", "positive_only_literal"),
        one_class_training=training_from("one_class_training"),
        multiclass_training=training_from("multiclass_training"),
        output_path=raw.get("output_path"),
        seed=seed,
    )
