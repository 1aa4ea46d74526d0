"""
Shared fixtures: tiny double-precision networks and isolated settings /
artifact directories.
"""

import pytest
import torch

from ganinvert.config.settings import reset_settings
from ganinvert.models.networks import build_model, default_generator_spec
from ganinvert.storage.datasets import synth_gaussians


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """No stray GANINVERT_* variables or .env files leak into a test."""
    for var in ("GANINVERT_ARTIFACT_DIR", "GANINVERT_LOG_LEVEL", "GANINVERT_LOG_FORMAT",
                "GANINVERT_NUM_WORKERS", "GANINVERT_MNIST_DIR"):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.chdir(tmp_path)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def vector_generator_spec():
    return default_generator_spec(2, (2,), hidden=16)


@pytest.fixture
def image_generator_spec():
    return default_generator_spec(4, (8, 8, 1), hidden=8)


@pytest.fixture
def tiny_generator(vector_generator_spec):
    return build_model(vector_generator_spec, seed=0, dtype=torch.float64).freeze()


@pytest.fixture
def gaussians():
    return synth_gaussians(4, 400, seed=0, radius=0.8, std=0.02)


@pytest.fixture
def artifact_dir(tmp_path):
    path = tmp_path / "artifacts"
    path.mkdir()
    return path
