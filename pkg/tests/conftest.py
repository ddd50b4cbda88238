"""Shared fixtures: tiny random models for fast unit tests, plus the
committed desk-scale artifacts (fixture dataset, trained victim weights)
for regression and acceptance tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from fsakit.harness import Dataset, load_idx
from fsakit.model import build_cnn, build_mlp, load_weights

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = ROOT / "data"
MODELS_DIR = ROOT / "models"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cnn():
    """Small untrained CNN on 12x12 inputs; cheap gradients for unit tests."""
    return build_cnn((1, 12, 12), 10, np.random.default_rng(7))


@pytest.fixture(scope="session")
def tiny_mlp():
    return build_mlp((1, 12, 12), 10, np.random.default_rng(8))


@pytest.fixture(scope="session")
def tiny_mlp_4x4():
    """Matches the 4x4 toy datasets used by the harness tests."""
    return build_mlp((1, 4, 4), 10, np.random.default_rng(21))


@pytest.fixture(scope="session")
def tiny_batch():
    """A handful of random images + labels matching tiny_cnn's input."""
    gen = np.random.default_rng(99)
    return gen.uniform(0.0, 1.0, (6, 1, 12, 12)), gen.integers(0, 10, 6)


@pytest.fixture(scope="session")
def fixture_data() -> Dataset:
    """The committed 1000-image held-out fixture."""
    return load_idx(DATA_DIR / "fixture-images.idx", DATA_DIR / "fixture-labels.idx", name="fixture")


@pytest.fixture(scope="session")
def desk_cnn():
    """The committed trained victim CNN."""
    return load_weights(MODELS_DIR / "desk_cnn.fsaw")


@pytest.fixture(scope="session")
def desk_mlp():
    return load_weights(MODELS_DIR / "desk_mlp.fsaw")
