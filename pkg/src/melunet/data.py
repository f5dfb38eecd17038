"""Dataset ingestion (CSV and IDX) and synthetic dataset generators."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DatasetParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_csv_dataset(path, shape: tuple | None = None):
    """CSV rows: feature columns then an integer label column.

    Returns (data, labels, n_classes); with `shape` = (C, H, W) each row's
    features reshape to an image.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError(f"{path}: no such dataset file")
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise DatasetParseError(
                        f"{path}:{lineno}: need at least one feature and a label")
            elif len(parts) != width:
                raise DatasetParseError(
                    f"{path}:{lineno}: expected {width} columns, got {len(parts)}")
            try:
                values = [float(v) for v in parts]
            except ValueError as exc:
                raise DatasetParseError(f"{path}:{lineno}: {exc}") from None
            label = values[-1]
            if label != int(label) or label < 0:
                raise ConfigurationError(
                    f"{path}:{lineno}: label must be a nonnegative integer, got {label}")
            rows.append(values[:-1])
            labels.append(int(label))
    if not rows:
        raise DatasetParseError(f"{path}: empty dataset file")
    data = np.asarray(rows, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if shape is not None:
        expected = int(np.prod(shape))
        if data.shape[1] != expected:
            raise ConfigurationError(
                f"{path}: rows have {data.shape[1]} features, cannot reshape to {shape}")
        data = data.reshape(len(data), *shape)
    return data, labels, int(labels.max()) + 1


def _open_maybe_gzip(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError(f"{path}: no such dataset file")
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file -> (N, 1, rows, cols) float array."""
    with _open_maybe_gzip(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise DatasetParseError(f"{path}: truncated header at offset {len(header)}")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetParseError(
                f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}")
        payload = fh.read(count * rows * cols)
    if len(payload) != count * rows * cols:
        raise DatasetParseError(
            f"{path}: truncated pixel data at offset {16 + len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).astype(float)
    return data.reshape(count, 1, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise DatasetParseError(f"{path}: truncated header at offset {len(header)}")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DatasetParseError(
                f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}")
        payload = fh.read(count)
    if len(payload) != count:
        raise DatasetParseError(f"{path}: truncated labels at offset {8 + len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).astype(int)


def load_idx_dataset(images_path, labels_path):
    data = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(data) != len(labels):
        raise DatasetParseError(
            f"{images_path} holds {len(data)} images but {labels_path} "
            f"holds {len(labels)} labels")
    return data, labels, int(labels.max()) + 1


def rescale_to_range(data: np.ndarray, upper: float) -> np.ndarray:
    """Affinely map the dataset's global value range onto [0, upper]."""
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        return np.zeros_like(data)
    return (data - lo) * (upper / (hi - lo))


# ------------------------------------------------------------------
# synthetic datasets
# ------------------------------------------------------------------


def make_blobs(n_samples: int = 200, seed: int = 0, separation: float = 4.0):
    """Two linearly separable 2-D Gaussian blobs."""
    rng = np.random.default_rng(seed)
    half = n_samples // 2
    a = rng.normal(loc=(-separation / 2, 0.0), scale=0.6, size=(half, 2))
    b = rng.normal(loc=(separation / 2, 0.0), scale=0.6, size=(n_samples - half, 2))
    data = np.concatenate([a, b])
    labels = np.concatenate([np.zeros(half, int), np.ones(n_samples - half, int)])
    order = rng.permutation(n_samples)
    return data[order], labels[order]


def make_image_dataset(n_samples: int = 1000, n_classes: int = 10,
                       size: int = 16, seed: int = 0, noise: float = 0.35,
                       jitter: int = 1):
    """Grayscale pattern-classification images in [0, 1].

    Each class is a fixed template of two Gaussian bumps; samples add a
    small integer translation and pixel noise, then the whole dataset is
    affinely rescaled to [0, 1].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    templates = []
    for c in range(n_classes):
        angle = 2.0 * np.pi * c / n_classes
        r = size / 3.2
        cy1 = size / 2 + r * np.sin(angle)
        cx1 = size / 2 + r * np.cos(angle)
        cy2 = rng.uniform(size * 0.25, size * 0.75)
        cx2 = rng.uniform(size * 0.25, size * 0.75)
        s1 = size / 7.0
        s2 = size / 5.0
        bump1 = np.exp(-((yy - cy1) ** 2 + (xx - cx1) ** 2) / (2 * s1 ** 2))
        bump2 = 0.7 * np.exp(-((yy - cy2) ** 2 + (xx - cx2) ** 2) / (2 * s2 ** 2))
        templates.append(bump1 + bump2)

    labels = np.arange(n_samples) % n_classes
    labels = rng.permutation(labels)
    data = np.empty((n_samples, 1, size, size))
    for i, c in enumerate(labels):
        img = templates[c]
        if jitter:
            img = np.roll(img, rng.integers(-jitter, jitter + 1), axis=0)
            img = np.roll(img, rng.integers(-jitter, jitter + 1), axis=1)
        data[i, 0] = img + rng.normal(0.0, noise, size=(size, size))
    return rescale_to_range(data, 1.0), labels
