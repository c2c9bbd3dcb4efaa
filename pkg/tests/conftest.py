import numpy as np
import pytest
import torch

# conv backward oversubscribes threads badly on small CPUs; pin to one
torch.set_num_threads(1)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


@pytest.fixture
def torch_gen():
    return torch.Generator().manual_seed(0)
