"""Temporal long-short dependency unit: one dilated ``t x 1`` convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unik.nn import Module, uniform_param
from unik.tensor import ops
from unik.tensor.core import DEFAULT_DTYPE, ConfigError, Tensor


@dataclass(frozen=True)
class TlsuConfig:
    C: int
    t: int = 9
    d: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.t < 1 or self.t % 2 == 0:
            raise ConfigError(f"temporal kernel size must be odd, got t={self.t}")
        if self.d < 1:
            raise ConfigError(f"dilation must be >= 1, got d={self.d}")
        if self.stride not in (1, 2):
            raise ConfigError(f"temporal stride must be 1 or 2, got {self.stride}")

    @property
    def receptive_field(self) -> int:
        return ops.receptive_field(self.t, self.d)


def tlsu_forward(x: Tensor, cfg: TlsuConfig, w: Tensor) -> Tensor:
    return ops.temporal_conv(x, w, dilation=cfg.d, stride=cfg.stride)


class Tlsu(Module):
    def __init__(self, cfg: TlsuConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cfg = cfg
        self.weight = uniform_param((cfg.C, cfg.C, cfg.t, 1), cfg.C * cfg.t, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return tlsu_forward(x, self.cfg, self.weight)
