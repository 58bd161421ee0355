"""Shared fixtures."""

from dataclasses import replace

import numpy as np
import pytest

from mfhca.core.frontend import FrontendConfig
from mfhca.core.gradcheck import tiny_model_config
from mfhca.core.model import ModelConfig


@pytest.fixture
def rng():
    """Seeded generator so every test sees the same draws."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """A model small enough to check exhaustively."""
    return tiny_model_config(seed=0)


@pytest.fixture
def short_frontend() -> FrontendConfig:
    """0.25 s segments: 22 frames of 200 bins, 12 feature frames per segment."""
    return FrontendConfig(segment_seconds=0.25)


@pytest.fixture
def trainable_config(tiny_config, short_frontend) -> ModelConfig:
    """The tiny model sized for ``short_frontend`` spectrograms."""
    return replace(
        tiny_config,
        spec_shape=short_frontend.spectrogram_shape,
        feature_frames=short_frontend.feature_stride,
    )


@pytest.fixture(autouse=True)
def isolated_config(monkeypatch, tmp_path):
    """Keep a developer's $MFHCA_CONFIG_PATH and working directory out of the tests."""
    monkeypatch.delenv("MFHCA_CONFIG_PATH", raising=False)
    monkeypatch.chdir(tmp_path)
