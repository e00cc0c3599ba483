import numpy as np
import pytest

from unik.net import (
    DEFAULT_CHANNELS,
    NetworkConfig,
    UnikBlock,
    block_forward,
    build_network,
    count_params,
    linear_head_params,
    network_forward,
)
from unik.tensor import ops
from unik.tensor.core import ConfigError, DimensionError, Tensor
from unik.tensor.gradcheck import grad_check_many

TINY = dict(V=5, C_in=2, num_classes=3, channels=(8, 8, 16), dilations=(1, 2, 1), t=3, N=2)


def test_default_config_strides():
    cfg = NetworkConfig()
    assert cfg.K == 10 and cfg.channels == DEFAULT_CHANNELS
    assert cfg.strides == (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)
    assert cfg.feature_dim == 256


@pytest.mark.parametrize(
    "kw",
    [
        {"channels": (8, 4)},
        {"channels": (8, 8), "dilations": (1,)},
        {"t": 4},
        {"V": 0},
        {"channels": ()},
    ],
)
def test_config_validation(kw):
    base = dict(channels=(8, 8), dilations=(1, 1))
    base.update(kw)
    with pytest.raises(ConfigError):
        NetworkConfig(**base)


def test_config_json_and_fingerprint():
    cfg = NetworkConfig(**TINY)
    assert NetworkConfig.from_json(cfg.to_json()) == cfg
    assert cfg.fingerprint() == NetworkConfig(**TINY).fingerprint()
    assert cfg.fingerprint() != cfg.with_classes(4).fingerprint()
    assert 0 <= cfg.fingerprint() < 2**32


def test_forward_shape_default():
    net = build_network(NetworkConfig(V=17, C_in=2, num_classes=31), seed=0)
    x = np.random.default_rng(0).normal(size=(2, 1, 2, 16, 17))
    logits = network_forward(x, net.cfg, net, "eval")
    assert logits.shape == (2, 31) and np.isfinite(logits.data).all()
    p = ops.softmax_rows(logits).data
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)


def test_zero_input_gives_bias_row():
    net = build_network(NetworkConfig(**TINY), seed=1)
    logits = network_forward(np.zeros((3, 1, 2, 8, 5)), net.cfg, net, "eval").data
    assert np.allclose(logits, net.classifier.bias.data[None].repeat(3, axis=0), atol=1e-6)


@pytest.mark.parametrize("T", [4, 5, 7, 12, 33])
@pytest.mark.parametrize("V", [1, 5, 9])
def test_shape_propagation(T, V):
    cfg = NetworkConfig(**{**TINY, "V": V, "persons": 2})
    net = build_network(cfg, seed=0)
    x = np.random.default_rng(T).normal(size=(2, 2, 2, T, V))
    assert network_forward(x, cfg, net, "train").shape == (2, 3)


def test_input_mismatch():
    net = build_network(NetworkConfig(**TINY), seed=0)
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((1, 1, 2, 8, 6))))
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((1, 1, 3, 8, 5))))


def test_eval_determinism_and_batch_invariance():
    cfg = NetworkConfig(**TINY)
    x = np.random.default_rng(0).normal(size=(5, 1, 2, 12, 5)).astype(np.float32)
    a = network_forward(x, cfg, build_network(cfg, seed=3), "eval").data
    net = build_network(cfg, seed=3)
    b = network_forward(x, cfg, net, "eval").data
    assert a.tobytes() == b.tobytes()
    for i in range(5):
        # BLAS may block a batch differently from a single clip, so only near-equality holds
        alone = network_forward(x[i : i + 1], cfg, net, "eval").data
        assert np.allclose(alone, b[i : i + 1], rtol=1e-5, atol=1e-6)


def test_person_pooling_averages_features():
    cfg = NetworkConfig(**{**TINY, "persons": 2})
    net = build_network(cfg, seed=0).eval()
    rng = np.random.default_rng(0)
    p1, p2 = rng.normal(size=(2, 1, 1, 2, 8, 5))
    both = net.features(Tensor(np.concatenate([p1, p2], axis=1))).data
    f1 = net.features(Tensor(np.concatenate([p1, p1], axis=1))).data
    f2 = net.features(Tensor(np.concatenate([p2, p2], axis=1))).data
    assert np.allclose(both, (f1 + f2) / 2, atol=1e-5)


def test_block_zero_paths_leave_residual():
    cfg = NetworkConfig(**TINY)
    rng = np.random.default_rng(0)
    block = UnikBlock(8, 16, cfg, 1, 2, rng, dtype=np.float64)
    for h in block.slsu.heads:
        for p in h.parameters():
            p.data[...] = 0.0
    block.slsu.residual.data[...] = 0.0
    block.tlsu.weight.data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 8, 6, 5)))
    r = block.bn_r(ops.temporal_conv(x, block.residual, 1, 2))
    assert np.allclose(block_forward(x, block).data, np.maximum(r.data, 0))


def test_shape_preserving_block_maps_zero_to_zero():
    cfg = NetworkConfig(**TINY)
    block = UnikBlock(8, 8, cfg, 1, 1, np.random.default_rng(0))
    assert not block(Tensor(np.zeros((2, 8, 6, 5)))).data.any()


def test_block_grad_float32_matches_float64():
    cfg = NetworkConfig(**TINY)
    grads = {}
    for dtype in (np.float32, np.float64):
        rng = np.random.default_rng(0)
        block = UnikBlock(2, 8, cfg, 1, 1, rng, dtype=dtype)
        block.eval()
        x = Tensor(rng.normal(size=(1, 2, 8, 5)).astype(dtype), requires_grad=True)
        w = Tensor(rng.normal(size=(1, 8, 8, 5)).astype(dtype))
        ops.sum(ops.mul(block(x), w)).backward()
        grads[dtype] = x.grad.astype(np.float64)
    # finite differences are too noisy at 32-bit; compare against the 64-bit backward instead
    assert np.allclose(grads[np.float32], grads[np.float64], rtol=1e-3, atol=1e-4)


def test_block_grad_float64():
    cfg = NetworkConfig(**TINY)
    rng = np.random.default_rng(1)
    block = UnikBlock(2, 8, cfg, 1, 1, rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(2, 2, 8, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 8, 8, 5)))
    assert grad_check_many(lambda: ops.sum(ops.mul(block(x), w)), [x] + block.parameters()) < 1e-5


# -- parameter counts ------------------------------------------------------------------


def test_head_counts():
    assert linear_head_params(256, 31) == 7967
    assert linear_head_params(256, 15) == 3855
    assert count_params(NetworkConfig(num_classes=31))["classifier"] == 7967
    assert count_params(NetworkConfig(num_classes=15))["classifier"] == 3855


def test_backbone_count_in_range():
    counts = count_params(NetworkConfig(V=17, C_in=2))
    assert 3.0e6 <= counts["backbone"] <= 3.9e6
    assert counts["total"] == counts["backbone"] + counts["classifier"]


def test_backbone_count_independent_of_classes():
    a = count_params(NetworkConfig(num_classes=31))["backbone"]
    b = count_params(NetworkConfig(num_classes=15))["backbone"]
    assert a == b


def test_feature_dim_independent_of_joints():
    for V in (5, 17, 25):
        net = build_network(NetworkConfig(**{**TINY, "V": V, "channels": (8, 8, 256)}), seed=0)
        assert net.features(Tensor(np.zeros((1, 1, 2, 6, V)))).shape == (1, 256)


def test_mode_validation():
    net = build_network(NetworkConfig(**TINY), seed=0)
    with pytest.raises(ConfigError):
        network_forward(np.zeros((1, 1, 2, 6, 5)), net.cfg, net, "test")
