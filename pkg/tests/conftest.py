import numpy as np
import pytest
import torch

from groupflow.config import ModelConfig


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_cfg():
    return ModelConfig.tiny()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training acceptance tests")
