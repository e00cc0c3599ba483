"""Parameter containers shared by the network units."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from unik.tensor import ops
from unik.tensor.core import DEFAULT_DTYPE, Tensor

NEGATIVE_SLOPE = math.sqrt(5.0)


def uniform_bound(fan_in: int, a: float = NEGATIVE_SLOPE) -> float:
    """``sqrt(6 / ((1 + a^2) * fan_in))``; equals ``1/sqrt(fan_in)`` for ``a = sqrt(5)``."""
    return math.sqrt(6.0 / ((1.0 + a * a) * fan_in))


def sample_uniform(shape: Sequence[int], bound: float, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """``U(-bound, bound)`` draws that stay inside the bound after casting to ``dtype``."""
    vals = rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype)
    edge = np.asarray(bound, dtype=dtype)
    if float(edge) > bound:
        # rounding to a narrower float can land just past the bound
        edge = np.nextafter(edge, np.asarray(0, dtype=dtype))
    return np.clip(vals, -edge, edge)


def uniform_param(shape: Sequence[int], fan_in: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE, a: float = NEGATIVE_SLOPE) -> Tensor:
    return Tensor(sample_uniform(shape, uniform_bound(fan_in, a), rng, dtype), requires_grad=True)


class Module:
    """Minimal parameter tree: tensors, buffers and child modules registered by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            self._children[name] = ModuleList(value)
            value = self._children[name]
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state(self) -> Dict[str, np.ndarray]:
        """Every parameter and buffer array by dotted name (live references)."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state(self, arrays: Dict[str, np.ndarray], names: Optional[Sequence[str]] = None) -> None:
        """Copy arrays in place; ``names`` limits which entries are restored."""
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        for name in names if names is not None else arrays:
            dst = targets[name]
            src = np.asarray(arrays[name])
            if src.shape != dst.shape:
                raise ValueError(f"{name}: shape {src.shape} does not match {dst.shape}")
            dst[...] = src

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items: Sequence[Module]):
        super().__init__()
        object.__setattr__(self, "_items", list(items))
        for i, item in enumerate(self._items):
            self._children[str(i)] = item

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class BatchNorm(Module):
    """Batch normalisation over every axis except ``axis`` (1D or 2D depending on input rank)."""

    def __init__(self, channels: int, axis: int = 1, momentum: float = 0.1, eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.axis = axis
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, axis=self.axis, momentum=self.momentum, eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.weight = uniform_param((out_features, in_features), in_features, rng, dtype)
        self.bias = uniform_param((out_features,), in_features, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)
