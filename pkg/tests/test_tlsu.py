import itertools

import numpy as np
import pytest

from conftest import leaf
from unik.tensor import ops
from unik.tensor.core import ConfigError, Tensor
from unik.tensor.gradcheck import grad_check_many
from unik.tlsu import Tlsu, TlsuConfig, tlsu_forward


def test_delta_kernel_identity(rng):
    cfg = TlsuConfig(C=3, t=9, d=3)
    w = np.zeros((3, 3, 9, 1))
    w[range(3), range(3), 4, 0] = 1.0
    x = rng.normal(size=(2, 3, 11, 5))
    assert np.allclose(tlsu_forward(Tensor(x), cfg, Tensor(w)).data, x)


def test_receptive_field():
    assert TlsuConfig(C=4, t=9, d=3).receptive_field == 25


def test_stride_two_halves_time():
    unit = Tlsu(TlsuConfig(C=2, t=3, stride=2), np.random.default_rng(0))
    assert unit(Tensor(np.ones((1, 2, 10, 3)))).shape == (1, 2, 5, 3)


@pytest.mark.parametrize("kw", [{"t": 4}, {"d": 0}, {"stride": 3}])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        TlsuConfig(C=2, **kw)


def test_init_bound():
    unit = Tlsu(TlsuConfig(C=8, t=9), np.random.default_rng(0))
    assert unit.weight.shape == (8, 8, 9, 1)
    assert np.abs(unit.weight.data).max() <= 1 / np.sqrt(72)


@pytest.mark.parametrize("d,s", [(1, 1), (3, 1), (2, 2)])
def test_gradients(rng, d, s):
    unit = Tlsu(TlsuConfig(C=3, t=3, d=d, stride=s), rng, dtype=np.float64)
    x = leaf(rng.normal(size=(2, 3, 8, 3)))
    out_shape = unit(x).shape
    w = Tensor(rng.normal(size=out_shape))
    assert grad_check_many(lambda: ops.sum(ops.mul(unit(x), w)), [x, unit.weight]) < 1e-5


@pytest.mark.parametrize("V", [2, 3, 4])
def test_joint_permutation_equivariance(V):
    rng = np.random.default_rng(V)
    unit = Tlsu(TlsuConfig(C=3, t=5, d=2, stride=2), rng, dtype=np.float64)
    x = rng.normal(size=(2, 3, 9, V))
    base = unit(Tensor(x)).data
    for perm in itertools.permutations(range(V)):
        perm = np.array(perm)
        assert np.abs(unit(Tensor(x[..., perm])).data - base[..., perm]).max() < 1e-5
