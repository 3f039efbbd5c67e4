"""Dataset ingestion and synthesis.

MNIST is read from IDX files on disk (no downloading here; see README for
the source URL) and converted row-wise: each 28x28 image becomes a
28-step sequence of 28-pixel feature rows in [0, 1]. A deterministic
synthetic sequence-classification task provides a fast desk-scale
substitute.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxParseError(ValueError):
    """Malformed IDX file; the message names the offending byte offset."""


@dataclass(frozen=True)
class SequenceDataset:
    """Uniform-length labeled sequences: X is (N, T, F), y is (N,)."""

    X: np.ndarray
    y: np.ndarray
    name: str
    num_classes: int

    def __post_init__(self):
        if self.X.ndim != 3 or len(self.y) != len(self.X):
            raise ValueError("X must be (N, T, F) with matching labels")
        if len(self.X) == 0:
            raise ValueError("dataset must be non-empty")
        if self.y.min() < 0 or self.y.max() >= self.num_classes:
            raise ValueError("labels out of range")

    def __len__(self):
        return len(self.X)

    @property
    def timesteps(self) -> int:
        return self.X.shape[1]

    @property
    def features(self) -> int:
        return self.X.shape[2]


def _read_exact(f, n, offset, what):
    buf = f.read(n)
    if len(buf) != n:
        raise IdxParseError(
            f"truncated file while reading {what}: wanted {n} bytes at "
            f"offset {offset}, got {len(buf)}")
    return buf


def load_mnist_idx(images_path, labels_path, name="mnist-rows") -> SequenceDataset:
    """Load an IDX image/label pair as row-wise sequences."""
    with open(images_path, "rb") as f:
        header = _read_exact(f, 16, 0, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise IdxParseError(
                f"bad image magic 0x{magic:08x} at offset 0 in {images_path}")
        raw = _read_exact(f, count * rows * cols, 16, "image data")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)

    with open(labels_path, "rb") as f:
        header = _read_exact(f, 8, 0, "label header")
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise IdxParseError(
                f"bad label magic 0x{magic:08x} at offset 0 in {labels_path}")
        raw = _read_exact(f, label_count, 8, "label data")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if count != label_count:
        raise IdxParseError(
            f"count mismatch: {count} images (offset 4 of {images_path}) vs "
            f"{label_count} labels (offset 4 of {labels_path})")

    X = images.astype(np.float64) / 255.0
    return SequenceDataset(X=X, y=labels, name=name, num_classes=10)


def write_idx_images(path, images_u8):
    """Write (N, R, C) uint8 images in IDX format (round-trip helper)."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    n, r, c = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, r, c))
        f.write(images_u8.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def make_synthetic_task(num_classes: int, timesteps: int, features: int,
                        n_per_class: int, noise_std: float,
                        seed: int = 0) -> SequenceDataset:
    """Separable-by-construction sinusoid templates plus Gaussian noise.

    Class k's template is a smooth surface over (time, feature) with a
    class-specific frequency and phase; samples are the template plus
    i.i.d. noise, clipped to [0, 1].
    """
    if min(num_classes, timesteps, features, n_per_class) < 1:
        raise ValueError("all task parameters must be positive")
    rng = np.random.default_rng(seed)
    t = np.arange(timesteps, dtype=np.float64)[:, None]
    f = np.arange(features, dtype=np.float64)[None, :]

    X = np.empty((num_classes * n_per_class, timesteps, features))
    y = np.empty(num_classes * n_per_class, dtype=np.int64)
    for k in range(num_classes):
        freq = 0.5 + 0.5 * k
        phase = 2.0 * math.pi * k / num_classes
        template = 0.5 + 0.45 * np.sin(
            2.0 * math.pi * freq * t / timesteps + phase
            + 2.0 * math.pi * f / features)
        lo, hi = k * n_per_class, (k + 1) * n_per_class
        noise = rng.normal(0.0, noise_std, size=(n_per_class, timesteps, features)) \
            if noise_std > 0 else 0.0
        X[lo:hi] = np.clip(template[None] + noise, 0.0, 1.0)
        y[lo:hi] = k
    return SequenceDataset(X=X, y=y, name="synthetic", num_classes=num_classes)


def split(ds: SequenceDataset, fractions, seed: int = 0):
    """Seeded shuffle then contiguous slicing into disjoint subsets."""
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    out = []
    start = 0
    for frac in fractions:
        size = int(round(frac * len(ds)))
        if size == 0:
            raise ValueError(f"fraction {frac} yields an empty split")
        idx = order[start:start + size]
        start += size
        part = SequenceDataset(X=ds.X[idx], y=ds.y[idx], name=ds.name,
                               num_classes=ds.num_classes)
        hist = np.bincount(part.y, minlength=ds.num_classes)
        log.debug("split %s: %d items, class histogram %s",
                  ds.name, size, hist.tolist())
        out.append(part)
    return tuple(out)
