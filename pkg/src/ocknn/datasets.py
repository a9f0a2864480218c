"""Directory-of-classes ingestion, seeded deterministic splits and image loading.

Dataset layout on disk is one subdirectory per class under a root, each
holding image files::

    root/
      class_a/ img001.png img002.png ...
      class_b/ ...

Splits are reproducible from (manifest, spec): the per-class file list is
shuffled with a seeded numpy Generator and partitioned into a train prefix
and a test suffix. A split exports to a plain-text listing with one line
per image: ``<train|test>\\t<class>\\t<relative path>``.

Also provides a generator for a small synthetic labeled dataset (distinct
color/texture archetype per class) so the full pipeline can be exercised
without any downloaded data.
"""

from __future__ import annotations

import colorsys
import dataclasses
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import DatasetError, InputError

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclasses.dataclass(frozen=True)
class DatasetManifest:
    """Ordered view of a scanned dataset: class names and per-class image paths."""

    root: Path
    classes: tuple[str, ...]
    images: Mapping[str, tuple[Path, ...]]

    def count(self, class_id: str) -> int:
        return len(self.images[class_id])

    @property
    def total_images(self) -> int:
        return sum(len(v) for v in self.images.values())


def scan_directory(root) -> DatasetManifest:
    """Scan a directory-of-classes dataset into a manifest.

    Classes and files are ordered lexicographically so the manifest is
    deterministic. A class directory without a single image file is an
    error: silently dropping it would skew every downstream protocol.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root {root} does not exist or is not a directory")
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not classes:
        raise DatasetError(f"dataset root {root} contains no class subdirectories")
    images: dict[str, tuple[Path, ...]] = {}
    for name in classes:
        files = sorted(
            p for p in (root / name).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise DatasetError(f"class '{name}' contains no image files")
        images[name] = tuple(files)
    return DatasetManifest(root=root, classes=tuple(classes), images=images)


def select_classes(
    manifest: DatasetManifest,
    class_count: int | None = None,
    per_class_count: int | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Seeded, balanced subsample of a manifest.

    Picks ``class_count`` classes and ``per_class_count`` images per class
    (None keeps everything). Selected classes and files stay in
    lexicographic order, so passing None for both is the identity.
    """
    rng = np.random.default_rng(seed)
    classes = list(manifest.classes)
    if class_count is not None:
        if class_count < 1 or class_count > len(classes):
            raise DatasetError(
                f"cannot select {class_count} classes from {len(classes)} available"
            )
        chosen = rng.choice(len(classes), size=class_count, replace=False)
        classes = sorted(classes[i] for i in chosen)
    images: dict[str, tuple[Path, ...]] = {}
    for name in classes:
        files = list(manifest.images[name])
        if per_class_count is not None:
            if per_class_count < 1 or per_class_count > len(files):
                raise DatasetError(
                    f"class '{name}' has {len(files)} images, cannot select {per_class_count}"
                )
            keep = rng.choice(len(files), size=per_class_count, replace=False)
            files = sorted(files[i] for i in keep)
        images[name] = tuple(files)
    return DatasetManifest(root=manifest.root, classes=tuple(classes), images=images)


@dataclasses.dataclass(frozen=True)
class SplitSpec:
    """How to partition each class: a fixed train count or a train fraction."""

    train_count: int | None = None
    train_fraction: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.train_count is None) == (self.train_fraction is None):
            raise InputError("exactly one of train_count / train_fraction must be set")
        if self.train_fraction is not None and not 0.0 < self.train_fraction < 1.0:
            raise InputError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.train_count is not None and self.train_count < 1:
            raise InputError(f"train_count must be >= 1, got {self.train_count}")

    @property
    def mode(self) -> str:
        return "count_per_class" if self.train_count is not None else "fraction"


@dataclasses.dataclass(frozen=True)
class Split:
    """Disjoint per-class train/test partition of a manifest."""

    root: Path
    classes: tuple[str, ...]
    train: Mapping[str, tuple[Path, ...]]
    test: Mapping[str, tuple[Path, ...]]
    spec: SplitSpec | None = None

    def train_count(self, class_id: str) -> int:
        return len(self.train[class_id])

    def test_count(self, class_id: str) -> int:
        return len(self.test[class_id])

    def to_listing(self) -> str:
        """Plain-text export: one ``<train|test>\\t<class>\\t<relpath>`` line per image."""
        lines = []
        for part, table in (("train", self.train), ("test", self.test)):
            for name in self.classes:
                for path in table[name]:
                    rel = path.relative_to(self.root) if path.is_absolute() else path
                    lines.append(f"{part}\t{name}\t{rel.as_posix()}")
        return "\n".join(lines) + "\n"


def make_split(manifest: DatasetManifest, spec: SplitSpec) -> Split:
    """Seeded per-class shuffle, then prefix/suffix partition.

    Every class keeps at least one test image; asking for a train count
    equal to (or above) the class size is an error.
    """
    rng = np.random.default_rng(spec.seed)
    train: dict[str, tuple[Path, ...]] = {}
    test: dict[str, tuple[Path, ...]] = {}
    for name in manifest.classes:
        files = list(manifest.images[name])
        n = len(files)
        if spec.train_count is not None:
            n_train = spec.train_count
        else:
            n_train = int(round(spec.train_fraction * n))
        if not 1 <= n_train <= n - 1:
            raise InputError(
                f"class '{name}': train size {n_train} must be in [1, {n - 1}] for {n} images"
            )
        order = rng.permutation(n)
        train[name] = tuple(files[i] for i in order[:n_train])
        test[name] = tuple(files[i] for i in order[n_train:])
    return Split(root=manifest.root, classes=manifest.classes, train=train, test=test, spec=spec)


def parse_split_listing(text: str, root) -> Split:
    """Inverse of Split.to_listing (the spec echo is not representable in text)."""
    root = Path(root)
    train: dict[str, list[Path]] = {}
    test: dict[str, list[Path]] = {}
    classes: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[0] not in ("train", "test"):
            raise InputError(f"split listing line {lineno} is malformed: {line!r}")
        part, name, rel = parts
        if name not in classes:
            classes.append(name)
        target = train if part == "train" else test
        target.setdefault(name, []).append(root / rel)
    if not classes:
        raise InputError("split listing contains no entries")
    for name in classes:
        if not train.get(name) or not test.get(name):
            raise InputError(f"split listing misses a train or test partition for class '{name}'")
    return Split(
        root=root,
        classes=tuple(classes),
        train={c: tuple(v) for c, v in train.items()},
        test={c: tuple(v) for c, v in test.items()},
        spec=None,
    )


def load_image(path, input_shape: tuple[int, int, int] = (227, 227, 3)) -> np.ndarray:
    """Read an image file into a (height, width, 3) float32 array in [0, 1].

    Bilinear resize of the full frame to input_shape, no crop. Grayscale
    sources are replicated to three channels.
    """
    height, width, channels = input_shape
    if channels != 3:
        raise InputError(f"input_shape must have 3 channels, got {channels}")
    try:
        with PILImage.open(path) as img:
            img.load()
            if img.width == 0 or img.height == 0:
                raise InputError(f"image {path} has a zero dimension")
            img = img.convert("RGB")
            if (img.height, img.width) != (height, width):
                img = img.resize((width, height), PILImage.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except InputError:
        raise
    except Exception as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return arr


def resize_image(image, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an in-memory (H, W, 3) float array."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"expected an (H, W, 3) image array, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InputError("image array has a zero dimension")
    if arr.shape[:2] == (height, width):
        return arr
    planes = [
        np.asarray(
            PILImage.fromarray(arr[:, :, k], mode="F").resize((width, height), PILImage.BILINEAR)
        )
        for k in range(3)
    ]
    return np.stack(planes, axis=2).astype(np.float32)


def _class_palette(index: int) -> tuple[float, float, float]:
    # golden-ratio hue walk keeps any number of classes visually distinct
    hue = (index * 0.618033988749895) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.85, 1.0)


def generate_synthetic_dataset(
    root,
    class_count: int = 4,
    images_per_class: int = 24,
    image_size: tuple[int, int] = (64, 64),
    seed: int = 0,
    class_names: Sequence[str] | None = None,
) -> DatasetManifest:
    """Write a small labeled image dataset with one archetype per class.

    Each class owns a horizontal band of the frame filled with a
    class-specific color and stripe texture; the rest of the frame stays
    black, so the pixel supports of different classes are (near-)disjoint
    and classes are widely separated while per-image noise keeps the
    intra-class spread small. Deterministic for a given seed: the same call
    reproduces byte-identical files.
    """
    if class_count < 1:
        raise InputError("class_count must be >= 1")
    if images_per_class < 1:
        raise InputError("images_per_class must be >= 1")
    height, width = image_size
    if class_names is None:
        digits = max(2, len(str(class_count - 1)))
        class_names = [f"class_{i:0{digits}d}" for i in range(class_count)]
    elif len(class_names) != class_count:
        raise InputError("class_names length must equal class_count")

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    xs = np.arange(width, dtype=np.float64)

    for index, name in enumerate(class_names):
        class_dir = root / name
        class_dir.mkdir(exist_ok=True)
        top = (index * height) // class_count
        bottom = ((index + 1) * height) // class_count
        color = np.array(_class_palette(index), dtype=np.float64)
        stripes = 0.6 + 0.4 * np.sin(2.0 * math.pi * (index + 2) * xs / width)
        band = stripes[None, :, None] * color[None, None, :]
        for j in range(images_per_class):
            frame = np.zeros((height, width, 3), dtype=np.float64)
            brightness = rng.uniform(0.85, 1.0)
            noise = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, size=(bottom - top, width, 1))
            frame[top:bottom] = np.clip(band * brightness * noise, 0.0, 1.0)
            pixels = np.round(frame * 255.0).astype(np.uint8)
            PILImage.fromarray(pixels, mode="RGB").save(class_dir / f"img_{j:04d}.png")

    return scan_directory(root)
