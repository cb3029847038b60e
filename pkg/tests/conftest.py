"""
Test configuration for xbarsim tests.
"""

import os
from unittest.mock import patch

import numpy as np
import pytest

# Set up test environment variables before any imports
os.environ.update(
    {
        "XBARSIM_LOG_LEVEL": "WARNING",
        "XBARSIM_SEED": "0",
        "XBARSIM_THREADS": "2",
        "XBARSIM_MAX_PULSES": "1000",
    }
)
os.environ.pop("XBARSIM_LOG_FILE", None)


@pytest.fixture(autouse=True)
def setup_test_environment():
    """Keep rich output out of the test log."""
    with patch("rich.console.Console.print") as mock_print:
        yield mock_print


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def tmp_out(tmp_path, monkeypatch):
    """Point XBARSIM_OUT_DIR at a temporary directory."""
    monkeypatch.setenv("XBARSIM_OUT_DIR", str(tmp_path))
    return tmp_path


@pytest.fixture(scope="session")
def separable_data():
    """Linearly separable two-class data with a fixed train/test split."""
    from xbarsim.datasets import gen_synthetic_dataset, kfold_split

    data = gen_synthetic_dataset(2000, 64, 6.0, seed=7)
    train_idx, test_idx = kfold_split(len(data), 5, seed=7)[0]
    return data.subset(train_idx), data.subset(test_idx)


@pytest.fixture(scope="session")
def trained_mlp(separable_data):
    """64-32-2 MLP trained once per session."""
    from xbarsim.network import build_mlp
    from xbarsim.trainer import TrainConfig, train_tiny

    train, _ = separable_data
    net = build_mlp([64, 32, 2], np.random.default_rng(7))
    return train_tiny(net, train, TrainConfig(epochs=20, seed=7)).network
