"""
IDX parsing and the synthetic Gaussian-mixture sets.
"""

import gzip

import numpy as np
import pytest
import torch

from ganinvert.middleware.error_handler import DatasetError, IdxFormatError
from ganinvert.storage.datasets import (
    denormalize,
    load_idx,
    load_mnist_dir,
    mode_centers,
    normalize,
    synth_gaussians,
)


def idx_images(pixels: np.ndarray) -> bytes:
    n, h, w = pixels.shape
    header = bytes([0, 0, 0x08, 0x03]) + b"".join(v.to_bytes(4, "big") for v in (n, h, w))
    return header + pixels.astype(np.uint8).tobytes()


def idx_labels(labels) -> bytes:
    return bytes([0, 0, 0x08, 0x01]) + len(labels).to_bytes(4, "big") + bytes(labels)


@pytest.fixture
def two_images(tmp_path):
    pixels = np.array([[[0, 255], [51, 204]], [[255, 255], [0, 0]]], dtype=np.uint8)
    images = tmp_path / "imgs-idx3-ubyte"
    labels = tmp_path / "lbls-idx1-ubyte"
    images.write_bytes(idx_images(pixels))
    labels.write_bytes(idx_labels([7, 2]))
    return images, labels


def test_idx_pixels_map_linearly_to_unit_range(two_images):
    data = load_idx(*two_images, split="test")
    assert data.images.shape == (2, 2, 2, 1)
    assert data.images.dtype == np.float32
    np.testing.assert_allclose(data.images[0, :, :, 0], [[-1.0, 1.0], [-0.6, 0.6]], atol=1e-6)
    np.testing.assert_array_equal(data.labels, [7, 2])
    assert data.split == "test"


def test_idx_tensor_layout_is_nchw(two_images):
    x = load_idx(*two_images).to_tensor()
    assert x.shape == (2, 1, 2, 2)
    assert x[0, 0, 0, 1].item() == 1.0


def test_idx_limit(two_images):
    assert len(load_idx(*two_images, limit=1)) == 1


def test_idx_bad_magic(two_images):
    _, labels = two_images
    with pytest.raises(IdxFormatError):
        load_idx(labels, labels)


def test_idx_count_mismatch(tmp_path):
    images = tmp_path / "i"
    labels = tmp_path / "l"
    images.write_bytes(idx_images(np.zeros((10, 1, 1), dtype=np.uint8)))
    labels.write_bytes(idx_labels([0] * 9))
    with pytest.raises(IdxFormatError, match="10 images vs 9 labels"):
        load_idx(images, labels)


def test_idx_truncated_and_trailing_bytes(two_images, tmp_path):
    images, labels = two_images
    short = tmp_path / "short"
    short.write_bytes(images.read_bytes()[:-1])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(short, labels)

    long = tmp_path / "long"
    long.write_bytes(images.read_bytes() + b"\x00")
    with pytest.raises(IdxFormatError, match="trailing"):
        load_idx(long, labels)


def test_mnist_dir_reads_gzip(tmp_path):
    pixels = np.full((3, 4, 4), 255, dtype=np.uint8)
    with gzip.open(tmp_path / "t10k-images-idx3-ubyte.gz", "wb") as fh:
        fh.write(idx_images(pixels))
    with gzip.open(tmp_path / "t10k-labels-idx1-ubyte.gz", "wb") as fh:
        fh.write(idx_labels([0, 1, 2]))
    data = load_mnist_dir(tmp_path, split="test")
    assert data.images.shape == (3, 4, 4, 1)
    assert np.all(data.images == 1.0)


def test_mnist_dir_missing_files(tmp_path):
    with pytest.raises(DatasetError):
        load_mnist_dir(tmp_path, split="train")


def test_denormalize_inverts_normalize():
    pixels = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(denormalize(normalize(pixels)), pixels)


def test_single_mode_sits_at_the_ring_point():
    data = synth_gaussians(1, 2000, seed=3, radius=2.0, std=0.02)
    np.testing.assert_allclose(data.images.mean(axis=0), [2.0, 0.0], atol=5e-3)
    assert set(data.labels.tolist()) == {0}


def test_eight_modes_balanced_and_centered():
    data = synth_gaussians(8, 8000, seed=0)
    assert np.bincount(data.labels).tolist() == [1000] * 8
    centers = mode_centers(8, 0.8)
    for k in range(8):
        mean = data.images[data.labels == k].mean(axis=0)
        np.testing.assert_allclose(mean, centers[k], atol=5e-3)
        assert np.linalg.norm(centers[k]) == pytest.approx(0.8)


def test_default_ring_stays_inside_the_tanh_range():
    data = synth_gaussians(8, 800, seed=0)
    assert np.abs(data.images).max() < 1.0


def test_synthetic_sets_are_seeded():
    a = synth_gaussians(4, 100, seed=5)
    b = synth_gaussians(4, 100, seed=5)
    c = synth_gaussians(4, 100, seed=6)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)
    assert a.to_tensor(torch.float64).shape == (100, 2)


def test_synthetic_argument_checks():
    with pytest.raises(DatasetError):
        synth_gaussians(0, 10, seed=0)
    with pytest.raises(DatasetError):
        synth_gaussians(5, 4, seed=0)
