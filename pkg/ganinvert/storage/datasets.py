"""
Datasets
IDX (MNIST / Fashion-MNIST) loading and synthetic 2-D Gaussian-mixture sets.

Pixels are mapped linearly from [0, 255] to [-1, 1] to match the tanh
generator range.
"""

import gzip
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch

from ganinvert.middleware.error_handler import DatasetError, IdxFormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_UBYTE = 0x08

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class LabeledImageSet:
    """Images (n×h×w×c, or n×f for vector data) with integer labels."""
    images: np.ndarray
    labels: np.ndarray
    split: str
    source: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Images as a model-layout tensor (NCHW for images, (n, f) for vectors)."""
        return images_to_tensor(self.images, dtype)

    def label_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.labels.astype(np.int64))

    def subset(self, indices: Sequence[int]) -> "LabeledImageSet":
        idx = np.asarray(indices)
        return LabeledImageSet(self.images[idx], self.labels[idx], self.split, self.source)

    def head(self, n: int) -> "LabeledImageSet":
        return self.subset(np.arange(min(n, len(self))))

    def shuffled(self, seed: int) -> "LabeledImageSet":
        order = np.random.default_rng(seed).permutation(len(self))
        return self.subset(order)


def images_to_tensor(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    tensor = torch.from_numpy(np.ascontiguousarray(images))
    if tensor.dim() == 4:
        tensor = tensor.permute(0, 3, 1, 2).contiguous()
    return tensor.to(dtype)


def tensor_to_images(tensor: torch.Tensor) -> np.ndarray:
    """Inverse of images_to_tensor."""
    tensor = tensor.detach().cpu()
    if tensor.dim() == 4:
        tensor = tensor.permute(0, 2, 3, 1)
    return tensor.numpy()


# ==================== NORMALIZATION ====================

def normalize(pixels: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] → float32 [-1, 1]."""
    return pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize(values: np.ndarray) -> np.ndarray:
    """float [-1, 1] → uint8 [0, 255]; exact inverse of normalize on its image."""
    return np.clip(np.rint((values.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


# ==================== IDX ====================

def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except OSError as e:
        raise IdxFormatError(f"cannot read {path}: {e}") from e


def _parse_idx(blob: bytes, expected_magic: int, name: str) -> np.ndarray:
    if len(blob) < 4:
        raise IdxFormatError(f"{name}: file too short for a magic number")
    magic = int.from_bytes(blob[:4], "big")
    if magic != expected_magic:
        raise IdxFormatError(f"{name}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")

    ndim = blob[3]
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxFormatError(f"{name}: truncated dimension header")
    dims = tuple(int.from_bytes(blob[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))

    expected = math.prod(dims)
    payload = blob[header_len:]
    if len(payload) < expected:
        raise IdxFormatError(f"{name}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise IdxFormatError(f"{name}: {len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    split: str = "train",
    limit: Optional[int] = None,
) -> LabeledImageSet:
    """
    Load an IDX image/label file pair (optionally gzip-compressed).

    Args:
        images_path: idx3-ubyte file (magic 0x00000803)
        labels_path: idx1-ubyte file (magic 0x00000801)
        split: "train" or "test"
        limit: Keep only the first `limit` items

    Returns:
        LabeledImageSet: Images n×h×w×1 in [-1, 1], uint8 labels widened to int64

    Raises:
        IdxFormatError: Bad magic, truncated payload, or count mismatch
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))

    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]

    logger.info(f"Loaded {len(labels)} {split} images of shape {images.shape[1:]} from {images_path}")
    return LabeledImageSet(
        images=normalize(images)[..., None],
        labels=labels.astype(np.int64),
        split=split,
        source=f"idx:{Path(images_path).name}",
    )


def load_mnist_dir(directory: Union[str, Path], split: str = "train", limit: Optional[int] = None) -> LabeledImageSet:
    """Load the standard MNIST-family file names from a directory (.gz accepted)."""
    directory = Path(directory)
    if split not in MNIST_FILES:
        raise DatasetError(f"unknown split '{split}'")
    found = []
    for stem in MNIST_FILES[split]:
        candidates = [directory / stem, directory / f"{stem}.gz"]
        match = next((c for c in candidates if c.exists()), None)
        if match is None:
            raise DatasetError(f"{stem}[.gz] not found in {directory}")
        found.append(match)
    return load_idx(found[0], found[1], split=split, limit=limit)


# ==================== SYNTHETIC ====================

def mode_centers(k_modes: int, radius: float) -> np.ndarray:
    """Centers of k modes evenly spaced on a ring (mode 0 at angle 0)."""
    angles = 2.0 * np.pi * np.arange(k_modes) / k_modes
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def synth_gaussians(
    k_modes: int,
    n: int,
    seed: int,
    radius: float = 0.8,
    std: float = 0.02,
    split: str = "train",
) -> LabeledImageSet:
    """
    Draw n points from k isotropic Gaussians on a ring, labeled by mode.

    Every mode receives ⌊n/k⌋ or ⌈n/k⌉ points.

    Args:
        k_modes: Number of modes (≥ 1)
        n: Number of points (≥ k_modes)
        seed: RNG seed
        radius: Ring radius (0 puts every mode at the origin)
        std: Per-axis standard deviation
        split: Split tag

    Returns:
        LabeledImageSet: (n, 2) float32 points with mode labels
    """
    if k_modes < 1:
        raise DatasetError(f"k_modes must be ≥ 1, got {k_modes}")
    if n < k_modes:
        raise DatasetError(f"n ({n}) must be ≥ k_modes ({k_modes})")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k_modes)
    centers = mode_centers(k_modes, radius)
    points = centers[labels] + std * rng.standard_normal((n, 2))

    return LabeledImageSet(
        images=points.astype(np.float32),
        labels=labels.astype(np.int64),
        split=split,
        source=f"synthetic:gaussians(k={k_modes},r={radius},std={std},seed={seed})",
    )
