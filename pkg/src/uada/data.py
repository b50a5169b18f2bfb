"""Datasets: a synthetic oriented-bar generator and IDX / CIFAR-10 binary loaders.

All pixels are stored as float32 in [0, 1]. The synthetic images are
quantized to 8 bits so that writing them to IDX and reading them back is
bit-exact.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .augment import ImageBatch
from .checkpoint import atomic_write_bytes
from .rng import substream

IDX_IMAGES_3D = 0x00000803
IDX_IMAGES_4D = 0x00000804
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic"  # synthetic | idx | cifar
    num_classes: int = 3
    image_size: int = 16
    train_count: int = 2000
    test_count: int = 500
    seed: int = 0
    jitter: float = 1.0  # scales orientation and position jitter; 0 renders canonical bars
    noise: float = 0.05
    train_paths: tuple[str, ...] = ()
    test_paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.source not in ("synthetic", "idx", "cifar"):
            raise FormatError(f"unknown dataset source {self.source!r}")
        if self.source == "synthetic":
            if self.train_count < 1 or self.test_count < 1:
                raise FormatError("dataset counts must be >= 1")
            if self.image_size < 8:
                raise FormatError("synthetic images must be at least 8x8")
            if self.num_classes < 1:
                raise FormatError("num_classes must be >= 1")


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, channels, height, width) float32
    labels: np.ndarray  # (n,) int64
    num_classes: int
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return self.images.shape[0]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def batch(self, index=None) -> ImageBatch:
        if index is None:
            return ImageBatch(self.images, self.labels)
        return ImageBatch(self.images[index], self.labels[index])


def bytes_to_unit(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


# ---------------------------------------------------------------------------
# synthetic oriented bars
# ---------------------------------------------------------------------------

def _render_bars(rng: np.random.Generator, labels: np.ndarray, spec: DatasetSpec) -> np.ndarray:
    n, size, c = len(labels), spec.image_size, spec.num_classes
    angle = np.deg2rad(180.0 * labels / c + spec.jitter * rng.uniform(-10.0, 10.0, n))
    cx = (size - 1) / 2.0 + spec.jitter * rng.uniform(-2.0, 2.0, n)
    cy = (size - 1) / 2.0 + spec.jitter * rng.uniform(-2.0, 2.0, n)
    thickness = rng.uniform(1.0, 2.5, n)
    brightness = rng.uniform(0.6, 1.0, n)
    half_len = 0.35 * size

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xx[None] - cx[:, None, None]
    dy = yy[None] - cy[:, None, None]
    ux = np.cos(angle)[:, None, None]
    uy = -np.sin(angle)[:, None, None]  # image rows grow downward
    along = np.abs(dx * ux + dy * uy)
    across = np.abs(-dx * uy + dy * ux)
    cover = np.clip(thickness[:, None, None] / 2 + 0.5 - across, 0, 1)
    cover *= np.clip(half_len + 0.5 - along, 0, 1)
    img = brightness[:, None, None] * cover
    img += rng.normal(0.0, spec.noise, img.shape)
    raw = np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
    return raw[:, None, :, :]


def gen_synthetic(spec: DatasetSpec, split: str = "train") -> Dataset:
    """Render oriented bars; class k sits at 180*k/num_classes degrees."""
    if spec.source != "synthetic":
        raise FormatError("gen_synthetic needs source=synthetic")
    if split not in ("train", "test"):
        raise FormatError(f"unknown split {split!r}")
    count = spec.train_count if split == "train" else spec.test_count
    rng = substream(spec.seed, "synthetic", 0 if split == "train" else 1)
    labels = rng.permutation(np.arange(count) % spec.num_classes).astype(np.int64)
    raw = _render_bars(rng, labels, spec)
    return Dataset(bytes_to_unit(raw), labels, spec.num_classes, {"source": "synthetic", "split": split})


# ---------------------------------------------------------------------------
# IDX (big-endian) files
# ---------------------------------------------------------------------------

def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _parse_idx(blob: bytes, path, expect: tuple[int, ...]) -> np.ndarray:
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated header at offset 0 ({len(blob)} bytes)")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic not in expect:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header at offset 4, need {header} bytes, have {len(blob)}")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    expected = header + int(np.prod(dims))
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload at offset {header} has {len(blob) - header} bytes, "
            f"expected {expected - header} (file {len(blob)} vs {expected} bytes)"
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    raw = _parse_idx(_read(images_path), images_path, (IDX_IMAGES_3D, IDX_IMAGES_4D))
    labels = _parse_idx(_read(labels_path), labels_path, (IDX_LABELS,)).astype(np.int64)
    if raw.ndim == 3:
        raw = raw[:, None, :, :]
    if raw.shape[0] != labels.shape[0]:
        raise FormatError(f"{images_path}: {raw.shape[0]} images but {labels.shape[0]} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{labels_path}: label {labels.max()} >= num_classes {num_classes}")
    return Dataset(bytes_to_unit(raw), labels, num_classes, {"source": "idx"})


def save_idx(d: Dataset, images_path, labels_path) -> None:
    """Write images (8-bit quantized) and labels as IDX files."""
    raw = np.floor(np.clip(d.images, 0, 1) * 255 + 0.5).astype(np.uint8)
    if raw.shape[1] == 1:
        raw = raw[:, 0]
        magic = IDX_IMAGES_3D
    else:
        magic = IDX_IMAGES_4D
    head = struct.pack(">I", magic) + struct.pack(f">{raw.ndim}I", *raw.shape)
    atomic_write_bytes(images_path, head + raw.tobytes())
    lab = d.labels.astype(np.uint8)
    atomic_write_bytes(labels_path, struct.pack(">II", IDX_LABELS, len(lab)) + lab.tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

def load_cifar_binary(paths: Sequence) -> Dataset:
    """Each record: 1 label byte + 3072 channel-planar pixel bytes (32x32x3)."""
    images, labels = [], []
    for path in paths:
        blob = _read(path)
        if len(blob) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: length {len(blob)} is not a multiple of {CIFAR_RECORD}"
            )
        rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    if not images:
        raise FormatError("no CIFAR files given")
    lab = np.concatenate(labels)
    if lab.size and lab.max() >= 10:
        raise FormatError(f"CIFAR label {lab.max()} out of range")
    return Dataset(bytes_to_unit(np.concatenate(images)), lab, 10, {"source": "cifar"})


def load_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """(train, test) for any source."""
    if spec.source == "synthetic":
        return gen_synthetic(spec, "train"), gen_synthetic(spec, "test")
    if spec.source == "idx":
        if len(spec.train_paths) != 2 or len(spec.test_paths) != 2:
            raise FormatError("idx source needs (images, labels) paths for train and test")
        train = load_idx(*spec.train_paths, num_classes=spec.num_classes)
        test = load_idx(*spec.test_paths, num_classes=spec.num_classes)
        return train, test
    return load_cifar_binary(spec.train_paths), load_cifar_binary(spec.test_paths)


def batches(d: Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> Iterator[ImageBatch]:
    """Shuffled mini-batches; the permutation depends only on (shuffle_seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = substream(shuffle_seed, "shuffle", epoch).permutation(len(d))
    for start in range(0, len(d), batch_size):
        idx = order[start:start + batch_size]
        yield ImageBatch(d.images[idx], d.labels[idx])


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
