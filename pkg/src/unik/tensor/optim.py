"""SGD with momentum and a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from unik.tensor.core import ConfigError, Tensor


def step_lr(epoch: int, lr0: float, decay_epochs: Sequence[int], factor: float = 0.1) -> float:
    """Learning rate at ``epoch``: ``lr0 * factor ** #{d in decay_epochs : d <= epoch}``."""
    passed = sum(1 for d in decay_epochs if d <= epoch)
    return lr0 * factor**passed


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: List[Tuple[int, float]] = field(default_factory=list)
    buffers: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {self.weight_decay}")
        self.base_lr = self.lr

    def lr_at(self, epoch: int) -> float:
        """Base rate times every schedule multiplier whose epoch has been reached."""
        lr = self.base_lr
        for at, mult in self.schedule:
            if at <= epoch:
                lr *= mult
        return lr


class SGD:
    """Classical momentum SGD with L2 weight decay folded into the gradient.

    ``g = grad + wd * w; v = momentum * v + g; w = w - lr * v``
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 0.1,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        decay_epochs: Sequence[int] = (),
        decay_factor: float = 0.1,
    ):
        self.params = list(params)
        self.state = OptimizerState(
            lr=lr,
            momentum=momentum,
            weight_decay=weight_decay,
            schedule=[(int(e), decay_factor) for e in decay_epochs],
        )

    @property
    def lr(self) -> float:
        return self.state.lr

    def set_epoch(self, epoch: int) -> float:
        self.state.lr = self.state.lr_at(epoch)
        return self.state.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        sgd_step(self.params, self.state)


def sgd_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name or p.shape} has no gradient")
    for p in params:
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        buf = state.buffers.get(id(p))
        if buf is None:
            buf = np.zeros_like(p.data)
            state.buffers[id(p)] = buf
        buf *= state.momentum
        buf += g
        p.data -= (state.lr * buf).astype(p.dtype, copy=False)
