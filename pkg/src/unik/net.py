"""Full network: input normalisation, K spatial-temporal blocks, pooling, classifier."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from unik.nn import BatchNorm, Linear, Module, uniform_param
from unik.slsu import Slsu, SlsuConfig
from unik.tensor import ops
from unik.tensor.core import DEFAULT_DTYPE, ConfigError, DimensionError, Tensor, no_grad
from unik.tlsu import Tlsu, TlsuConfig

DEFAULT_CHANNELS = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_DILATIONS = (1, 3, 3, 3, 3, 1, 1, 1, 1, 1)

CLASSIFIER_PREFIX = "classifier."


@dataclass(frozen=True)
class NetworkConfig:
    V: int = 17
    C_in: int = 2
    num_classes: int = 31
    channels: Tuple[int, ...] = DEFAULT_CHANNELS
    dilations: Tuple[int, ...] = DEFAULT_DILATIONS
    t: int = 9
    N: int = 3
    tau: int = 1
    persons: int = 1
    strides: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.strides is None:
            # downsample time at the first block of every channel increase
            strides = tuple(
                2 if i > 0 and self.channels[i] > self.channels[i - 1] else 1 for i in range(len(self.channels))
            )
            object.__setattr__(self, "strides", strides)
        else:
            object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        self.validate()

    @property
    def K(self) -> int:
        return len(self.channels)

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("network needs at least one block")
        if len(self.dilations) != self.K or len(self.strides) != self.K:
            raise ConfigError(
                f"channels ({self.K}), dilations ({len(self.dilations)}) and strides ({len(self.strides)}) must align"
            )
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"channel schedule must be non-decreasing: {self.channels}")
        if self.V < 1 or self.C_in < 1 or self.num_classes < 1 or self.persons < 1:
            raise ConfigError("V, C_in, num_classes and persons must be positive")
        if self.t % 2 == 0:
            raise ConfigError(f"temporal kernel size must be odd, got {self.t}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["dilations"] = list(self.dilations)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkConfig":
        obj = dict(obj)
        for key in ("channels", "dilations", "strides"):
            if obj.get(key) is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def backbone_json(self) -> dict:
        d = self.to_json()
        d.pop("num_classes")
        return d

    def fingerprint(self) -> int:
        """u32 hash of the full architecture."""
        return zlib.crc32(json.dumps(self.to_json(), sort_keys=True).encode("utf-8")) & 0xFFFFFFFF

    def with_classes(self, num_classes: int) -> "NetworkConfig":
        d = self.to_json()
        d["num_classes"] = num_classes
        return NetworkConfig.from_json(d)


class UnikBlock(Module):
    """``relu(BN(T-LSU(BN(S-LSU(x)))) + R(x))``.

    ``R`` is the identity, or a bias-free strided 1x1 projection followed by
    batch normalisation when the block changes shape.
    """

    def __init__(self, c_in: int, c_out: int, cfg: NetworkConfig, dilation: int, stride: int, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.stride = stride
        self.slsu = Slsu(SlsuConfig(C_in=c_in, C_out=c_out, N=cfg.N, tau=cfg.tau), cfg.V, rng, dtype)
        self.bn_s = BatchNorm(c_out, dtype=dtype)
        self.tlsu = Tlsu(TlsuConfig(C=c_out, t=cfg.t, d=dilation, stride=stride), rng, dtype)
        self.bn_t = BatchNorm(c_out, dtype=dtype)
        if c_in != c_out or stride != 1:
            self.residual = uniform_param((c_out, c_in, 1, 1), c_in, rng, dtype)
            self.bn_r = BatchNorm(c_out, dtype=dtype)
        else:
            object.__setattr__(self, "residual", None)
            object.__setattr__(self, "bn_r", None)

    def forward(self, x: Tensor) -> Tensor:
        return block_forward(x, self)


def block_forward(x: Tensor, block: UnikBlock) -> Tensor:
    y = block.bn_t(block.tlsu(block.bn_s(block.slsu(x))))
    if block.residual is None:
        r = x
    else:
        r = block.bn_r(ops.temporal_conv(x, block.residual, dilation=1, stride=block.stride))
    return ops.relu(ops.add(y, r))


class UnikNet(Module):
    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        super().__init__()
        object.__setattr__(self, "cfg", cfg)
        rng = np.random.default_rng(seed)
        self.input_bn = BatchNorm(cfg.C_in * cfg.V, dtype=dtype)
        blocks = []
        c_prev = cfg.C_in
        for c, d, s in zip(cfg.channels, cfg.dilations, cfg.strides):
            blocks.append(UnikBlock(c_prev, c, cfg, d, s, rng, dtype))
            c_prev = c
        self.blocks = blocks
        # separate stream so the backbone draw does not depend on the class count
        self.classifier = Linear(cfg.feature_dim, cfg.num_classes, np.random.default_rng([seed, 1]), dtype)

    def features(self, x: Tensor) -> Tensor:
        """Pooled ``(B, feature_dim)`` representation of a ``(B, M, C_in, T, V)`` batch."""
        if x.ndim != 5:
            raise DimensionError(f"network input must be (B, M, C_in, T, V), got {x.shape}")
        b, m, c, t, v = x.shape
        cfg = self.cfg
        if c != cfg.C_in or v != cfg.V:
            raise DimensionError(f"network expects C_in={cfg.C_in}, V={cfg.V}; got C_in={c}, V={v}")
        h = ops.reshape(x, (b * m, c, t, v))
        h = ops.reshape(ops.transpose(h, (0, 1, 3, 2)), (b * m, c * v, t))
        h = self.input_bn(h)
        h = ops.transpose(ops.reshape(h, (b * m, c, v, t)), (0, 1, 3, 2))
        for block in self.blocks:
            h = block(h)
        pooled = ops.mean(h, axis=(2, 3))
        return ops.mean(ops.reshape(pooled, (b, m, pooled.shape[1])), axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(self.features(x))

    def backbone_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith(CLASSIFIER_PREFIX)]

    def classifier_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if n.startswith(CLASSIFIER_PREFIX)]


def build_network(cfg: NetworkConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> UnikNet:
    return UnikNet(cfg, seed, dtype)


def network_forward(batch, cfg: NetworkConfig, net: UnikNet, mode: str = "eval") -> Tensor:
    """Logits ``(B, num_classes)`` for a ``(B, M, C_in, T, V)`` batch."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if net.cfg != cfg:
        raise ConfigError("network was built for a different configuration")
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=net.classifier.weight.dtype))
    net.train(mode == "train")
    if mode == "eval":
        with no_grad():
            return net(x)
    return net(x)


def count_params(cfg: NetworkConfig) -> Dict[str, int]:
    """Learnable parameter counts (running statistics excluded)."""
    net = UnikNet(cfg, seed=0)
    counts: Dict[str, int] = {}
    for name, p in net.named_parameters():
        top = name.split(".")[0]
        if top == "blocks":
            top = ".".join(name.split(".")[:2])
        counts[top] = counts.get(top, 0) + p.size
    classifier = counts.get("classifier", 0)
    total = sum(counts.values())
    counts["backbone"] = total - classifier
    counts["total"] = total
    return counts


def linear_head_params(feature_dim: int, num_classes: int) -> int:
    return feature_dim * num_classes + num_classes
