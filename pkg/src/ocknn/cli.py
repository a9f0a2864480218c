"""Command-line interface.

Subcommands mirror the pipeline stages: ``scan`` a dataset, ``split`` it,
``train`` the per-class models, ``build-refs`` the pooled reference set,
``classify`` a single image, ``run`` a full comparison experiment from a
declarative JSON config, and ``ablate`` the distance metric.

Exit codes: 0 on success; 2 configuration error, 3 dataset error, 4 input
or degenerate-vector error, 5 corruption/integrity error, 6 training error,
1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench
from .classifier import ClassifierConfig, classify, format_prediction
from .datasets import load_image, make_split, parse_split_listing, scan_directory, SplitSpec
from .embedding.backbones import BackboneSpec, load_backbone
from .embedding.training import (
    OneClassStrategy,
    TrainingConfig,
    load_model_bundle,
    save_model_bundle,
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
from .reference import build_reference_set, load_reference_set, save_reference_set

_EXIT_CODES = (
    (ConfigurationError, 2),
    (DatasetError, 3),
    ((InputError, DegenerateVectorError), 4),
    ((CorruptionError, IntegrityError), 5),
    (TrainingError, 6),
)


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigurationError(f"--input-shape must look like 227x227, got '{text}'")
    return (int(parts[0]), int(parts[1]), 3)


def _backbone_spec(args) -> BackboneSpec:
    return BackboneSpec(
        identifier=args.backbone,
        embedding_dim=args.embedding_dim,
        input_shape=_parse_shape(args.input_shape),
        seed=args.seed,
    )


def _load_models(models_dir: Path) -> list:
    bundles = sorted(d for d in Path(models_dir).iterdir() if d.is_dir())
    if not bundles:
        raise InputError(f"no model bundles under {models_dir}")
    return [load_model_bundle(d) for d in bundles]


def _cmd_scan(args) -> int:
    manifest = scan_directory(args.root)
    print(f"classes: {len(manifest.classes)}  images: {manifest.total_images}")
    for name in manifest.classes:
        print(f"{name}\t{manifest.count(name)}")
    return 0


def _cmd_split(args) -> int:
    if (args.train_count is None) == (args.train_fraction is None):
        raise ConfigurationError("exactly one of --train-count / --train-fraction is required")
    manifest = scan_directory(args.root)
    spec = SplitSpec(train_count=args.train_count, train_fraction=args.train_fraction, seed=args.seed)
    listing = make_split(manifest, spec).to_listing()
    if args.output:
        Path(args.output).write_text(listing)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(listing)
    return 0


def _split_from_args(args):
    root = Path(args.root)
    return parse_split_listing(Path(args.split_listing).read_text(), root)


def _cmd_train(args) -> int:
    split = _split_from_args(args)
    backbone = load_backbone(_backbone_spec(args))
    shape = backbone.spec.input_shape
    strategy = OneClassStrategy(args.strategy)
    train_arrays = {
        name: [load_image(p, shape) for p in split.train[name]] for name in split.classes
    }
    cfg = TrainingConfig(
        minibatch_size=args.minibatch or min(32, min(len(v) for v in train_arrays.values())),
        epochs=args.epochs,
        seed=args.seed,
    )
    models_dir = Path(args.models_dir)
    for name in split.classes:
        negatives = None
        if strategy is OneClassStrategy.BINARY_VS_OTHER_CLASSES:
            pool = [im for other in split.classes if other != name for im in train_arrays[other]]
            negatives = pool[: len(train_arrays[name])]
        model = train_one_class(backbone, train_arrays[name], name, strategy, cfg, negatives=negatives)
        save_model_bundle(model, models_dir / name)
        print(
            f"trained {name}: iterations={model.iterations_run} "
            f"seconds={model.training_seconds:.2f}"
        )
    return 0


def _cmd_build_refs(args) -> int:
    split = _split_from_args(args)
    models = _load_models(args.models_dir)
    by_class = {m.class_id: m for m in models}
    missing = [name for name in split.classes if name not in by_class]
    if missing:
        raise ConfigurationError(f"no model bundle for classes {missing}")
    ordered = [by_class[name] for name in split.classes]
    reference = build_reference_set(ordered, {name: split.train[name] for name in split.classes})
    reference.intended_metric = args.metric
    save_reference_set(reference, args.output)
    print(f"wrote {args.output}: {reference.row_count} rows x {reference.dim} dims")
    return 0


def _cmd_classify(args) -> int:
    reference = load_reference_set(args.refs)
    models = _load_models(args.models_dir)
    by_class = {m.class_id: m for m in models}
    missing = [name for name in reference.classes if name not in by_class]
    if missing:
        raise ConfigurationError(f"no model bundle for classes {missing}")
    ordered = [by_class[name] for name in reference.classes]
    image = load_image(args.image, ordered[0].backbone.spec.input_shape)
    cfg = ClassifierConfig(metric=args.metric, k_neighbors=args.k, search_scope=args.scope)
    sys.stdout.write(format_prediction(classify(ordered, reference, image, cfg)))
    return 0


def _cmd_run(args) -> int:
    cfg = bench.load_experiment_config(args.config, seed_override=args.seed)
    if args.output:
        cfg.output_path = Path(args.output)
    if args.approaches:
        cfg.approaches = tuple(args.approaches.split(","))
    if args.metric:
        cfg.classifier = ClassifierConfig(
            metric=args.metric,
            k_neighbors=cfg.classifier.k_neighbors,
            search_scope=cfg.classifier.search_scope,
        )
    report = bench.run_experiment(cfg)
    sys.stdout.write(bench.render_report(report))
    if cfg.output_path:
        print(f"artifacts written to {cfg.output_path}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = bench.load_experiment_config(args.config, seed_override=args.seed)
    metrics = args.metrics.split(",")
    report = bench.metric_ablation(cfg, metrics)
    sys.stdout.write(bench.render_ablation(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocknn",
        description="One-class model ensemble with a nearest-neighbor decision rule.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="scan a directory-of-classes dataset")
    p.add_argument("root")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("split", help="write a seeded train/test split listing")
    p.add_argument("root")
    p.add_argument("--train-count", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train one one-class model per class")
    p.add_argument("root")
    p.add_argument("--split-listing", required=True)
    p.add_argument("--models-dir", required=True)
    p.add_argument("--backbone", default="synthetic")
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--input-shape", default="227x227")
    p.add_argument("--strategy", default="positive_only_literal",
                   choices=[s.value for s in OneClassStrategy])
    p.add_argument("--minibatch", type=int)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("build-refs", help="embed the train split into a reference set")
    p.add_argument("root")
    p.add_argument("--split-listing", required=True)
    p.add_argument("--models-dir", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--metric", default="cosine")
    p.set_defaults(func=_cmd_build_refs)

    p = sub.add_parser("classify", help="classify one image")
    p.add_argument("image")
    p.add_argument("--models-dir", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--metric", default="cosine")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--scope", default="pooled", choices=["pooled", "within_class"])
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("run", help="run a comparison experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--approaches", help="comma-separated subset of proposed,conventional,multiclass_knn")
    p.add_argument("--metric")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate", help="accuracy per distance metric, one training run")
    p.add_argument("--config", required=True)
    p.add_argument("--metrics", default="cosine,correlation,spearman")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OcknnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
