"""
Pytest configuration and shared fixtures for the neuro_rbm test suite.

This module provides common fixtures and test utilities used across all test modules.
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Log files of the test session go to a scratch directory
os.environ.setdefault("NRBM_LOG_DIR", str(Path(tempfile.mkdtemp(prefix="nrbm-test-")) / "logs"))

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from compiler import CompileConfig, compile_model
from mnist_data import Dataset
from neural_sampler import REFERENCE_CONFIGS, SamplerConfig
from rbm_core import RbmModel, quantize

MNIST_DIR = Path(os.environ.get("NRBM_MNIST_DIR", "data"))
MNIST_TRAIN = MNIST_DIR / "train-images-idx3-ubyte"
MNIST_TEST = MNIST_DIR / "t10k-images-idx3-ubyte"


def pytest_configure(config):
    for marker in (
        "unit: Unit tests for individual components",
        "integration: End-to-end tests across several modules",
        "slow: Tests that take longer to run (acceptance-scale runs)",
        "requires_data: Tests that need the MNIST IDX files",
        "statistical: Monte-Carlo checks against binomial or 3-sigma bands",
    ):
        config.addinivalue_line("markers", marker)


@pytest.fixture
def rng():
    """
    Seeded generator for a single test.

    Returns
    -------
    numpy Generator with seed 1234
    """
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    """
    Hand-written 3+2 model with a mix of signs.

    Returns
    -------
    RbmModel with 3 visible and 2 hidden units
    """
    W = np.array([[0.5, -0.25], [-0.75, 0.1], [0.3, 0.6]])
    return RbmModel(W, np.array([0.2, -0.4, 0.1]), np.array([-0.3, 0.25]))


@pytest.fixture
def random_model_5x5():
    """
    Random 5+5 model from the quantization-study family.

    Returns
    -------
    RbmModel drawn with seed 7
    """
    return RbmModel.random(5, 5, np.random.default_rng(7))


@pytest.fixture
def g4_config():
    """The default (G4) sampler configuration at s = 50."""
    return REFERENCE_CONFIGS["G4"][0]


@pytest.fixture
def reference_configs():
    """G1..G5 sampler configurations with their tabulated MSE values."""
    return dict(REFERENCE_CONFIGS)


@pytest.fixture
def synthetic_dataset():
    """
    Twenty 6x6 binary images: horizontal and vertical bars.

    Returns
    -------
    Dataset with labels 0 (horizontal) and 1 (vertical)
    """
    images, labels = [], []
    for k in range(20):
        img = np.zeros((6, 6), dtype=np.int8)
        if k % 2 == 0:
            img[k % 6, :] = 1
        else:
            img[:, k % 6] = 1
        images.append(img)
        labels.append(k % 2)
    return Dataset(np.stack(images), np.array(labels))


@pytest.fixture
def small_compile_config(g4_config):
    """Compile settings for small test networks (T_A = 8)."""
    return CompileConfig(T_A=8, sampler=g4_config)


@pytest.fixture
def small_quantized_model(g4_config):
    """
    Random 4+3 model quantized at the sampler's s.

    Returns
    -------
    QuantizedRbm
    """
    return quantize(RbmModel.random(4, 3, np.random.default_rng(11)), g4_config.s)


@pytest.fixture
def small_placed_network(small_quantized_model, small_compile_config):
    """
    The 4+3 model compiled onto the substrate.

    Returns
    -------
    PlacedNetwork
    """
    return compile_model(small_quantized_model, small_compile_config)


@pytest.fixture
def mnist_paths():
    """Paths of the MNIST IDX files; skips the test when they are absent."""
    if not (MNIST_TRAIN.exists() or MNIST_TRAIN.with_suffix(".gz").exists()):
        pytest.skip(f"MNIST IDX files not found under {MNIST_DIR}")
    train = MNIST_TRAIN if MNIST_TRAIN.exists() else MNIST_TRAIN.with_suffix(".gz")
    test = MNIST_TEST if MNIST_TEST.exists() else MNIST_TEST.with_suffix(".gz")
    return train, test
