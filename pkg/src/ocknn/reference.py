"""The labeled reference set of training embeddings and its on-disk format.

The reference set pools, class by class, each one-class model's embeddings
of its own class's training images: with N training images per class and C
classes it holds K = N * C rows of dimension D. Rows are ordered
class-major, then input-image order, so builds are deterministic.

On disk the set is a fixed-endian binary payload plus a JSON manifest
sidecar (``<payload>.manifest.json``). Payload layout::

    bytes 0..3   magic "OCR1"
    bytes 4..11  row count K, dimension D (32-bit little-endian unsigned)
    bytes 12..   K*D IEEE-754 float32 values, little-endian, row-major

The manifest carries the labels and metadata (per-row labels and source
nets, class counts, intended metric, backbone identifier, creation
timestamp) plus a sha256 checksum of the payload bytes. Loading verifies
the checksum and the manifest/payload agreement; round trips are bit-exact
on any platform because the format pins endianness.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptionError,
    DegenerateVectorError,
    InputError,
    IntegrityError,
)

PAYLOAD_MAGIC = b"OCR1"
MANIFEST_SUFFIX = ".manifest.json"


@dataclasses.dataclass
class ReferenceSet:
    """K x D embedding matrix with per-row class labels and source nets.

    ``classes`` is the net order: row j was produced by net source_net[j],
    whose class is classes[source_net[j]] == labels[j].
    """

    vectors: np.ndarray
    labels: tuple[str, ...]
    source_net: np.ndarray
    classes: tuple[str, ...]
    backbone_identifier: str = ""
    intended_metric: str = "cosine"

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        self.labels = tuple(self.labels)
        self.source_net = np.asarray(self.source_net, dtype=np.int32)
        self.classes = tuple(self.classes)

    @property
    def row_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in self.classes}
        for label in self.labels:
            counts[label] += 1
        return counts

    def rows_for_class(self, class_id: str) -> np.ndarray:
        """Row indices whose label is ``class_id`` (O(K))."""
        if class_id not in self.classes:
            raise InputError(f"unknown class '{class_id}'")
        return np.flatnonzero(np.array([lbl == class_id for lbl in self.labels]))

    def validate(self) -> None:
        """Check every structural invariant; raises on the first violation."""
        if self.vectors.ndim != 2 or self.row_count < 1 or self.dim < 1:
            raise IntegrityError(f"vectors must be a non-empty K x D matrix, got shape {self.vectors.shape}")
        if len(self.labels) != self.row_count or len(self.source_net) != self.row_count:
            raise IntegrityError("labels/source_net length must equal the row count")
        if len(set(self.classes)) != len(self.classes) or not self.classes:
            raise IntegrityError("classes must be non-empty and unique")
        if not np.all(np.isfinite(self.vectors)):
            bad = int(np.flatnonzero(~np.isfinite(self.vectors).all(axis=1))[0])
            raise IntegrityError(f"row {bad} contains non-finite values")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise DegenerateVectorError(f"row {bad} has zero norm")
        seen = set()
        for j, (label, net) in enumerate(zip(self.labels, self.source_net)):
            if not 0 <= net < len(self.classes):
                raise IntegrityError(f"row {j}: source net {net} out of range")
            if self.classes[net] != label:
                raise IntegrityError(
                    f"row {j}: label '{label}' does not match net {net}'s class '{self.classes[net]}'"
                )
            seen.add(label)
        if seen != set(self.classes):
            missing = sorted(set(self.classes) - seen)
            raise IntegrityError(f"classes with no reference rows: {missing}")


def build_reference_set(models: Sequence, train_images: Mapping[str, Sequence]) -> ReferenceSet:
    """Embed each class's training images with that class's model and pool.

    ``train_images`` maps class id to that class's images (arrays, or paths
    loaded at the model's input shape). Models and image lists must cover
    exactly the same classes, one model per class.
    """
    if not models:
        raise ConfigurationError("at least one model is required")
    classes = tuple(m.class_id for m in models)
    if len(set(classes)) != len(classes):
        raise ConfigurationError(f"duplicate class ids among models: {classes}")
    if set(train_images.keys()) != set(classes):
        raise ConfigurationError(
            f"model classes {sorted(classes)} do not match image-list classes "
            f"{sorted(train_images.keys())}"
        )
    dims = {m.backbone.spec.embedding_dim for m in models}
    if len(dims) != 1:
        raise IntegrityError(f"models disagree on embedding dimension: {sorted(dims)}")
    families = {m.backbone.spec.identifier for m in models}
    if len(families) != 1:
        raise ConfigurationError(f"models mix backbone families: {sorted(families)}")

    from .datasets import load_image  # local import keeps module deps one-way

    blocks: list[np.ndarray] = []
    labels: list[str] = []
    source: list[int] = []
    for index, model in enumerate(models):
        items = list(train_images[model.class_id])
        if not items:
            raise InputError(f"class '{model.class_id}' has no training images")
        images = [
            load_image(item, model.backbone.spec.input_shape)
            if isinstance(item, (str, Path)) else item
            for item in items
        ]
        vecs = model.embed_batch(images)
        norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
        if np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            name = items[bad] if isinstance(items[bad], (str, Path)) else f"index {bad}"
            raise DegenerateVectorError(
                f"class '{model.class_id}': image {name} produced a zero-norm embedding"
            )
        blocks.append(vecs)
        labels.extend([model.class_id] * len(images))
        source.extend([index] * len(images))

    ref = ReferenceSet(
        vectors=np.vstack(blocks),
        labels=tuple(labels),
        source_net=np.array(source, dtype=np.int32),
        classes=classes,
        backbone_identifier=models[0].backbone.spec.identifier,
    )
    ref.validate()
    return ref


def _manifest_path(path: Path) -> Path:
    return Path(str(path) + MANIFEST_SUFFIX)


def _payload_bytes(ref: ReferenceSet) -> bytes:
    header = PAYLOAD_MAGIC + struct.pack("<II", ref.row_count, ref.dim)
    body = ref.vectors.astype("<f4").tobytes(order="C")
    return header + body


def save_reference_set(ref: ReferenceSet, path) -> Path:
    """Write the payload to ``path`` and the manifest sidecar next to it."""
    ref.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload_bytes(ref)
    path.write_bytes(payload)
    manifest = {
        "format": PAYLOAD_MAGIC.decode("ascii"),
        "row_count": ref.row_count,
        "dim": ref.dim,
        "classes": list(ref.classes),
        "class_counts": ref.class_counts(),
        "row_labels": list(ref.labels),
        "row_source_nets": [int(v) for v in ref.source_net],
        "backbone_identifier": ref.backbone_identifier,
        "intended_metric": ref.intended_metric,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "checksum_sha256": hashlib.sha256(payload).hexdigest(),
    }
    _manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_reference_set(path) -> ReferenceSet:
    """Load a payload/manifest pair, verifying checksum and metadata."""
    path = Path(path)
    manifest_path = _manifest_path(path)
    if not path.is_file():
        raise InputError(f"reference payload {path} does not exist")
    if not manifest_path.is_file():
        raise InputError(f"reference manifest {manifest_path} does not exist")
    payload = path.read_bytes()
    manifest = json.loads(manifest_path.read_text())

    if hashlib.sha256(payload).hexdigest() != manifest.get("checksum_sha256"):
        raise CorruptionError(f"checksum mismatch for {path}")
    if len(payload) < 12 or payload[:4] != PAYLOAD_MAGIC:
        raise CorruptionError(f"{path} is not an {PAYLOAD_MAGIC.decode('ascii')} payload")
    row_count, dim = struct.unpack("<II", payload[4:12])
    expected = 12 + 4 * row_count * dim
    if len(payload) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes for {row_count}x{dim}, found {len(payload)}")

    if int(manifest["dim"]) != dim:
        raise IntegrityError(f"manifest dim {manifest['dim']} disagrees with payload dim {dim}")
    if int(manifest["row_count"]) != row_count:
        raise IntegrityError(f"manifest row_count {manifest['row_count']} disagrees with payload {row_count}")
    labels = manifest["row_labels"]
    source = manifest["row_source_nets"]
    if len(labels) != row_count or len(source) != row_count:
        raise IntegrityError("manifest row labels/source nets do not cover every payload row")
    counts = manifest.get("class_counts", {})
    if sum(counts.values()) != row_count:
        raise IntegrityError("manifest class counts do not sum to the payload row count")

    vectors = np.frombuffer(payload, dtype="<f4", offset=12).reshape(row_count, dim)
    ref = ReferenceSet(
        vectors=vectors.astype(np.float32),
        labels=tuple(labels),
        source_net=np.array(source, dtype=np.int32),
        classes=tuple(manifest["classes"]),
        backbone_identifier=manifest.get("backbone_identifier", ""),
        intended_metric=manifest.get("intended_metric", "cosine"),
    )
    ref.validate()
    return ref
