"""Datasets: MNIST IDX files, synthetic blobs, and stratified subsets."""

from __future__ import annotations

import gzip
import logging
import struct
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from spectral_adv.autodiff import LabelArray, Tensor
from spectral_adv.exceptions import IDXFormatError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class Dataset:
    """Immutable images [N, C, H, W] in value-range units with integer labels."""

    images: Tensor
    labels: LabelArray
    value_range: tuple[float, float]
    name: str
    num_classes: int

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, C, H, W], got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        lo, hi = self.value_range
        if self.images.size and (self.images.min() < lo or self.images.max() > hi):
            raise ValueError(f"pixels outside value range {self.value_range}")
        labels = self.labels
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        _, c, h, w = self.images.shape
        return (c, h, w)

    def take(self, indices: np.ndarray, name: str | None = None) -> Dataset:
        return Dataset(
            self.images[indices],
            self.labels[indices],
            self.value_range,
            name or self.name,
            self.num_classes,
        )

    def batches(self, batch_size: int) -> Iterator[tuple[Tensor, LabelArray]]:
        """Consecutive batches in stored order."""
        for start in range(0, len(self), batch_size):
            stop = start + batch_size
            yield self.images[start:stop], self.labels[start:stop]


# --- IDX ---


def _open(path: Path) -> BinaryIO:
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return path.open("rb")


def _read_idx(path: Path, magic: int) -> np.ndarray:
    with _open(path) as handle:
        payload = handle.read()
    if len(payload) < 4:
        raise IDXFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", payload[:4])
    if found != magic:
        raise IDXFormatError(
            f"{path}: wrong magic 0x{found:08X}, expected 0x{magic:08X}"
        )
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(payload) < header:
        raise IDXFormatError(f"{path}: truncated dimension records")
    dims = struct.unpack(f">{rank}I", payload[4:header])
    expected = int(np.prod(dims))
    if len(payload) - header < expected:
        raise IDXFormatError(
            f"{path}: truncated data, expected {expected} bytes, "
            f"got {len(payload) - header}"
        )
    data = np.frombuffer(payload, dtype=np.uint8, count=expected, offset=header)
    return data.reshape(dims)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    *,
    name: str = "mnist",
    num_classes: int = 10,
) -> Dataset:
    """Load an IDX image/label pair, scaling pixels to [0, 1]."""
    raw_images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    raw_labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise IDXFormatError(
            f"count mismatch: {raw_images.shape[0]} images, "
            f"{raw_labels.shape[0]} labels"
        )
    images = raw_images.astype(np.float64)[:, None, :, :] / 255.0
    labels = raw_labels.astype(np.int64)
    log.info(
        "Loaded %d images of shape %s from %s",
        len(labels),
        images.shape[1:],
        images_path,
    )
    return Dataset(images, labels, (0.0, 1.0), name, num_classes)


def load_mnist(directory: str | Path, split: str = "train") -> Dataset:
    """Load the standard MNIST file pair (optionally gzipped) from ``directory``."""
    directory = Path(directory)

    def resolve(stem: str) -> Path:
        plain = directory / stem
        return plain if plain.exists() else directory / f"{stem}.gz"

    return load_idx(
        resolve(MNIST_FILES[f"{split}_images"]),
        resolve(MNIST_FILES[f"{split}_labels"]),
        name=f"mnist-{split}",
    )


def write_idx(
    dataset: Dataset, images_path: str | Path, labels_path: str | Path
) -> None:
    """Write a single-channel dataset back to IDX bytes (pixels rescaled to 0..255)."""
    if dataset.image_shape[0] != 1:
        raise ValueError("IDX images are single-channel")
    lo, hi = dataset.value_range
    scaled = np.rint((dataset.images[:, 0] - lo) / (hi - lo) * 255.0).astype(np.uint8)
    n, h, w = scaled.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, n, h, w) + scaled.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, n)
        + dataset.labels.astype(np.uint8).tobytes()
    )


# --- Synthetic data ---


def synth_blobs(
    classes: int,
    n_per_class: int,
    dims: int,
    separation: float,
    seed: int = 0,
    *,
    value_range: tuple[float, float] = (0.0, 1.0),
) -> Dataset:
    """Unit-variance Gaussian blobs around centres spaced ``separation`` apart.

    Centres lie on the first axis at 0, separation, 2*separation, ... The
    samples are rescaled affinely into ``value_range`` and laid out as
    [N, 1, 1, dims] images.
    """
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")
    rng = np.random.default_rng(seed)
    centres = np.zeros((classes, dims))
    centres[:, 0] = separation * np.arange(classes)
    labels = np.repeat(np.arange(classes, dtype=np.int64), n_per_class)
    points = centres[labels] + rng.standard_normal((labels.size, dims))

    lo, hi = value_range
    low, high = points.min(), points.max()
    span = high - low if high > low else 1.0
    points = lo + (points - low) / span * (hi - lo)
    points = np.clip(points, lo, hi)
    return Dataset(
        points.reshape(-1, 1, 1, dims),
        labels,
        value_range,
        f"blobs-{classes}x{dims}",
        classes,
    )


def subset(dataset: Dataset, n: int, seed: int = 0) -> Dataset:
    """Deterministic stratified sample of ``n`` items, kept in stored order.

    Each class receives its proportional share, rounded by largest remainder
    so every class lands within one item of its exact quota.
    """
    total = len(dataset)
    if n > total:
        raise ValueError(f"cannot take {n} items from a dataset of {total}")
    if n == total:
        return dataset
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(dataset.labels, return_counts=True)
    quotas = n * counts / total
    allocation = np.floor(quotas).astype(int)
    remainder = n - int(allocation.sum())
    # stable sort keeps ties toward the lower class index
    order = np.argsort(-(quotas - allocation), kind="stable")
    allocation[order[:remainder]] += 1

    chosen = []
    for label, share in zip(classes, allocation, strict=True):
        members = np.flatnonzero(dataset.labels == label)
        chosen.append(rng.permutation(members)[:share])
    indices = np.sort(np.concatenate(chosen))
    return dataset.take(indices, f"{dataset.name}[{n}]")


def rescale(dataset: Dataset, value_range: tuple[float, float]) -> Dataset:
    """Map pixels affinely from the dataset's value range onto ``value_range``."""
    if tuple(value_range) == tuple(dataset.value_range):
        return dataset
    lo, hi = dataset.value_range
    new_lo, new_hi = value_range
    images = new_lo + (dataset.images - lo) / (hi - lo) * (new_hi - new_lo)
    return Dataset(
        np.clip(images, new_lo, new_hi),
        dataset.labels.copy(),
        (new_lo, new_hi),
        dataset.name,
        dataset.num_classes,
    )
