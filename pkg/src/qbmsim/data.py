"""Training-data generation and image-archive ingestion.

Synthetic data cycles over four base patterns on n_v bits (half-ones,
alternating, and their bitwise negations) and flips each bit independently
with a Bernoulli noise probability.  The image path reads IDX archives
(big-endian headers, as used for handwritten-digit datasets), coarse-grains
each image onto a small grid, and binarizes against the per-image mean.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .training import Dataset


class IdxFormatError(ValueError):
    """An IDX archive is malformed (bad magic number or truncated data)."""


def base_patterns(n_v: int) -> np.ndarray:
    """The four generating patterns: half-ones, alternating, and negations.

    The half-ones pattern sets the first ceil(n_v/2) bits; the alternating
    pattern starts at 1.  Rows are x1, x2, ~x1, ~x2.
    """
    if n_v < 2:
        raise ValueError("patterns need at least 2 visible bits")
    x1 = np.zeros(n_v, dtype=np.uint8)
    x1[: (n_v + 1) // 2] = 1
    x2 = np.arange(1, n_v + 1, dtype=np.int64) % 2
    x2 = x2.astype(np.uint8)
    return np.stack([x1, x2, 1 - x1, 1 - x2])


def gen_synthetic(
    n_v: int,
    noise: float,
    count: int = 10000,
    seed: Optional[int] = None,
) -> Dataset:
    """Cycle uniformly over the four base patterns, flipping bits with prob noise."""
    if not 0.0 <= noise <= 0.5:
        raise ValueError(f"noise must lie in [0, 0.5], got {noise}")
    if count < 1:
        raise ValueError("count must be positive")
    patterns = base_patterns(n_v)
    rng = np.random.default_rng(seed)
    rows = patterns[np.arange(count) % 4]
    flips = (rng.random((count, n_v)) < noise).astype(np.uint8)
    return Dataset(vectors=np.bitwise_xor(rows, flips))


_IDX_IMAGE_MAGIC = 2051
_IDX_LABEL_MAGIC = 2049


def load_idx_images(path: str) -> np.ndarray:
    """Read an IDX image archive into a (count, rows, cols) uint8 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{path}: bad magic number {magic} (expected 2051)")
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise IdxFormatError(
            f"{path}: truncated data ({len(raw)} bytes, expected {expected})"
        )
    data = np.frombuffer(raw[16:expected], dtype=np.uint8)
    return data.reshape(count, rows, cols).copy()


def load_idx_labels(path: str) -> np.ndarray:
    """Read an IDX label archive into a (count,) uint8 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != _IDX_LABEL_MAGIC:
        raise IdxFormatError(f"{path}: bad magic number {magic} (expected 2049)")
    expected = 8 + count
    if len(raw) < expected:
        raise IdxFormatError(
            f"{path}: truncated data ({len(raw)} bytes, expected {expected})"
        )
    return np.frombuffer(raw[8:expected], dtype=np.uint8).copy()


def coarse_grain(image: np.ndarray, grid: int = 3) -> np.ndarray:
    """Mean intensity over a grid x grid block partition (near-equal blocks)."""
    image = np.asarray(image, dtype=np.float64)
    out = np.empty((grid, grid))
    row_blocks = np.array_split(np.arange(image.shape[0]), grid)
    col_blocks = np.array_split(np.arange(image.shape[1]), grid)
    for i, rb in enumerate(row_blocks):
        for j, cb in enumerate(col_blocks):
            out[i, j] = image[np.ix_(rb, cb)].mean()
    return out


def subsample_digits(
    images: np.ndarray,
    labels: np.ndarray,
    digit: int = 1,
    grid: int = 3,
    count: int = 400,
) -> Dataset:
    """Coarse-grain and binarize the images carrying one label.

    Each kept image is reduced to grid^2 block means and binarized against the
    mean of those values; ties (value equal to the mean) map to 1.  The first
    ``count`` matches in file order are returned as length-grid^2 bit vectors.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ValueError(
            f"image/label count mismatch: {len(images)} images, {len(labels)} labels"
        )
    keep = np.nonzero(labels == digit)[0]
    if len(keep) < count:
        raise ValueError(
            f"only {len(keep)} images carry label {digit}; {count} requested"
        )
    vectors = np.empty((count, grid * grid), dtype=np.uint8)
    for r, k in enumerate(keep[:count]):
        coarse = coarse_grain(images[k], grid)
        vectors[r] = (coarse >= coarse.mean()).astype(np.uint8).reshape(-1)
    return Dataset(vectors=vectors)
