import numpy as np
import pytest
import torch

torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
