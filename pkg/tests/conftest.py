import numpy as np
import pytest
import torch

from driveseg import ModelConfig
from driveseg.data import DataConfig


@pytest.fixture
def tiny_cfg():
    """Smallest full model: every switch on, 32x32 input."""
    return ModelConfig(encoder_channels=(4, 8, 8, 8, 8),
                       decoder_channels=(8, 8, 8, 4),
                       input_size=(32, 32))


@pytest.fixture
def toy_data_cfg():
    return DataConfig(toy_size=(64, 64), toy_count=8, toy_val_count=4,
                      toy_test_count=4, toy_seed=7)


@pytest.fixture
def single_thread():
    """Pin BLAS partitioning so bitwise comparisons across batch sizes hold."""
    old = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(old)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
