"""Datasets: in-memory image collections, folder ingestion, base/novel splits
and a procedural texture generator for desk-scale experiments.

Images are stored channel-last (H, W, C) as float32 in [0, 1].
"""

from __future__ import annotations

import colorsys
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError
from .seeding import rng

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif"}
MIN_SYNTH_SIDE = 16


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray
    class_id: int
    source_id: str


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint base (training) and novel (few-shot evaluation) class ids."""

    base_classes: tuple[int, ...]
    novel_classes: tuple[int, ...]

    def __post_init__(self):
        overlap = set(self.base_classes) & set(self.novel_classes)
        if overlap:
            raise ConfigError(f"base and novel classes overlap: {sorted(overlap)}")

    @property
    def all_classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.base_classes + self.novel_classes))

    def to_dict(self) -> dict:
        return {"base": list(self.base_classes), "novel": list(self.novel_classes)}


@dataclass(frozen=True)
class ClassInfo:
    class_id: int
    name: str
    count: int


@dataclass(frozen=True)
class DatasetManifest:
    shape: tuple[int, int, int]
    classes: tuple[ClassInfo, ...]
    split: DatasetSplit | None = None

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def class_id(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.class_id
        raise ConfigError(f"unknown class name {name!r}")

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "classes": [{"id": c.class_id, "name": c.name, "count": c.count} for c in self.classes],
            "split": self.split.to_dict() if self.split is not None else None,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        split = d.get("split")
        return cls(
            shape=tuple(d["shape"]),
            classes=tuple(ClassInfo(c["id"], c["name"], c["count"]) for c in d["classes"]),
            split=DatasetSplit(tuple(split["base"]), tuple(split["novel"])) if split else None,
        )


@dataclass(frozen=True)
class ImageDataset:
    """Immutable image collection; ``images`` is (N, H, W, C) float32."""

    images: np.ndarray
    labels: np.ndarray
    source_ids: tuple[str, ...]
    manifest: DatasetManifest
    skipped: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.images.ndim != 4 or tuple(self.images.shape[1:]) != tuple(self.manifest.shape):
            raise DataError(f"images of shape {self.images.shape} do not match manifest shape {self.manifest.shape}")
        if not (len(self.images) == len(self.labels) == len(self.source_ids)):
            raise DataError("images, labels and source_ids differ in length")
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> ImageSample:
        return ImageSample(self.images[i], int(self.labels[i]), self.source_ids[i])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.manifest.shape

    def indices_of(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_id)

    def with_split(self, split: DatasetSplit) -> "ImageDataset":
        present = {c.class_id for c in self.manifest.classes}
        if set(split.all_classes) != present:
            raise ConfigError("split does not cover exactly the dataset's classes")
        m = DatasetManifest(self.manifest.shape, self.manifest.classes, split)
        return ImageDataset(self.images, self.labels, self.source_ids, m, self.skipped)


def _decode(path: Path, target_shape: tuple[int, int, int]) -> np.ndarray | None:
    h, w, c = target_shape
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if c == 3 else "L")
            if im.size != (w, h):
                im = im.resize((w, h), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        logger.warning("skipping undecodable image %s: %s", path, exc)
        return None
    return arr.reshape(h, w, c)


def load_image_folder(
    root_path: str | Path,
    target_shape: tuple[int, int, int] = (64, 64, 3),
    workers: int | None = None,
) -> ImageDataset:
    """Load a ``root/<class_name>/<image>`` tree.

    Class ids follow lexicographic order of the directory names and sample
    order is lexicographic by file name within each class, regardless of
    how many decode workers run. Undecodable files are skipped (logged and
    listed in ``dataset.skipped``); a class left with no images is fatal.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise ConfigError(f"dataset directory not found: {root}")
    if target_shape[2] not in (1, 3):
        raise ConfigError(f"only 1 or 3 channels are supported, got {target_shape[2]}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ConfigError(f"no classes found in {root}")

    files: list[tuple[int, Path]] = []
    for cid, d in enumerate(class_dirs):
        files += [(cid, f) for f in sorted(d.iterdir()) if f.is_file()]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        decoded = list(pool.map(lambda cf: _decode(cf[1], target_shape), files))

    images, labels, sources, skipped = [], [], [], []
    for (cid, f), arr in zip(files, decoded):
        if arr is None:
            skipped.append(str(f.relative_to(root)))
            continue
        images.append(arr)
        labels.append(cid)
        sources.append(str(f.relative_to(root)))

    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(class_dirs))
    for cid, d in enumerate(class_dirs):
        if counts[cid] == 0:
            raise DataError(f"class {d.name!r} has no usable images")

    manifest = DatasetManifest(
        shape=tuple(target_shape),
        classes=tuple(ClassInfo(cid, d.name, int(counts[cid])) for cid, d in enumerate(class_dirs)),
    )
    return ImageDataset(np.stack(images), np.asarray(labels, dtype=np.int64), tuple(sources), manifest, tuple(skipped))


def make_split(manifest: DatasetManifest, base_classes: int | Sequence[str], seed: int = 0) -> DatasetSplit:
    """Partition classes into base and novel sets.

    An integer draws that many base classes with a seeded permutation; a
    list of class names fixes the base set explicitly (seed ignored).
    """
    ids = [c.class_id for c in manifest.classes]
    if isinstance(base_classes, (int, np.integer)):
        count = int(base_classes)
        if count < 1 or count >= len(ids):
            raise ConfigError(f"base class count must be in [1, {len(ids) - 1}], got {count}")
        perm = rng(seed, "split").permutation(ids)
        base = sorted(int(i) for i in perm[:count])
    else:
        base = sorted({manifest.class_id(name) for name in base_classes})
        if not base or len(base) >= len(ids):
            raise ConfigError("explicit base class list must leave at least one novel class")
    novel = [i for i in ids if i not in base]
    return DatasetSplit(tuple(base), tuple(novel))


def _texture(
    h: int, w: int, hue: float, theta: float, stripe_freq: float, blob_freq: float, g: np.random.Generator
) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xx = xx / w
    yy = yy / h
    shift_x, shift_y = g.uniform(0, 1, size=2)
    phase = g.uniform(0, 2 * np.pi)
    u = (xx + shift_x) * np.cos(theta) + (yy + shift_y) * np.sin(theta)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * stripe_freq * u + phase)
    bx, by = g.uniform(0, 2 * np.pi, size=2)
    blobs = np.clip(np.sin(2 * np.pi * blob_freq * xx + bx) * np.sin(2 * np.pi * blob_freq * yy + by), 0, None)

    primary = np.array(colorsys.hsv_to_rgb(hue % 1.0, SYNTH["saturation"], 0.9))
    secondary = np.array(colorsys.hsv_to_rgb((hue + 0.5) % 1.0, SYNTH["saturation"], 0.8))
    tint = g.uniform(0, 1, size=3) * SYNTH["tint"]
    mix = g.uniform(0.3, 0.7)
    brightness = g.uniform(*SYNTH["brightness"])
    img = (
        primary * (0.2 + mix * stripes)[..., None]
        + secondary * ((1 - mix) * blobs)[..., None]
    ) * brightness + tint
    img += g.normal(0.0, SYNTH["noise"], size=img.shape)
    return np.clip(img, 0.0, 1.0)


SYNTH = {"saturation": 0.5, "tint": 0.3, "brightness": (0.6, 1.1), "noise": 0.1, "hue_jitter": 0.06, "theta_jitter": 0.2}


def generate_synthetic_dataset(
    num_classes: int,
    samples_per_class: int,
    shape: tuple[int, int, int] = (64, 64, 3),
    seed: int = 0,
) -> ImageDataset:
    """Procedural texture classes.

    Each class draws three independent factors: a base hue, a stripe
    orientation and frequency, and a blob-lattice frequency. Each sample
    jitters all of them and adds a random translation, brightness and
    Gaussian pixel noise.
    """
    h, w, c = shape
    if num_classes < 2 or samples_per_class < 2:
        raise ConfigError("need num_classes >= 2 and samples_per_class >= 2")
    if h < MIN_SYNTH_SIDE or w < MIN_SYNTH_SIDE:
        raise ConfigError(f"synthetic images must be at least {MIN_SYNTH_SIDE}x{MIN_SYNTH_SIDE}, got {h}x{w}")
    if c not in (1, 3):
        raise ConfigError(f"only 1 or 3 channels are supported, got {c}")

    images = np.empty((num_classes * samples_per_class, h, w, c), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), samples_per_class)
    sources = []
    classes = []
    for k in range(num_classes):
        cg = rng(seed, "synth-class", k)
        hue = cg.uniform(0, 1)
        theta = cg.uniform(0, np.pi)
        stripe_freq = cg.uniform(1.5, 6.0)
        blob_freq = cg.uniform(1.0, 4.0)
        name = f"class_{k:02d}"
        classes.append(ClassInfo(k, name, samples_per_class))
        for s in range(samples_per_class):
            g = rng(seed, "synth-sample", k, s)
            img = _texture(
                h,
                w,
                hue + g.normal(0, SYNTH["hue_jitter"]),
                theta + g.normal(0, SYNTH["theta_jitter"]),
                stripe_freq * g.uniform(0.9, 1.1),
                blob_freq * g.uniform(0.9, 1.1),
                g,
            )
            if c == 1:
                img = img @ np.array([0.299, 0.587, 0.114])[:, None]
            images[k * samples_per_class + s] = img
            sources.append(f"{name}/{s:05d}")
    manifest = DatasetManifest(shape=(h, w, c), classes=tuple(classes))
    return ImageDataset(images, labels, tuple(sources), manifest)


def save_image_folder(dataset: ImageDataset, root: str | Path) -> list[Path]:
    """Write a dataset as ``root/<class_name>/<index>.png`` (8-bit)."""
    root = Path(root)
    written = []
    names = {c.class_id: c.name for c in dataset.manifest.classes}
    counters: dict[int, int] = {}
    for i in range(len(dataset)):
        cid = int(dataset.labels[i])
        j = counters.get(cid, 0)
        counters[cid] = j + 1
        d = root / names[cid]
        d.mkdir(parents=True, exist_ok=True)
        arr = np.rint(dataset.images[i] * 255.0).astype(np.uint8)
        mode = "RGB" if arr.shape[2] == 3 else "L"
        path = d / f"{j:05d}.png"
        Image.fromarray(arr if mode == "RGB" else arr[..., 0], mode=mode).save(path)
        written.append(path)
    return written


def class_counts(dataset: ImageDataset) -> dict[int, int]:
    ids: Iterable[int] = (c.class_id for c in dataset.manifest.classes)
    return {cid: int(np.sum(dataset.labels == cid)) for cid in ids}
