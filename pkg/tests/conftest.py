import numpy as np
import pytest

from unik.tensor.core import Tensor


def leaf(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
