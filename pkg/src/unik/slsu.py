"""Spatial long-short dependency unit.

Every head mixes joints with a learnable dependency matrix plus an
input-conditioned attention map, then embeds channels with a 1x1
convolution; head outputs are summed::

    out = sum_i E_i . (u x (W_i + A_i)) + residual(x)

where ``u`` is the input with the joints of ``tau`` neighbouring frames
concatenated, and ``A_i = softmax(theta_i(u)^T phi_i(u) / (C_e T))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from unik.nn import NEGATIVE_SLOPE, Module, sample_uniform, uniform_bound, uniform_param
from unik.tensor import ops
from unik.tensor.core import DEFAULT_DTYPE, ConfigError, DimensionError, Tensor


@dataclass(frozen=True)
class SlsuConfig:
    C_in: int
    C_out: int
    N: int = 3
    tau: int = 1
    C_e: Optional[int] = None
    a: float = NEGATIVE_SLOPE
    attention: bool = True
    residual: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError(f"S-LSU needs at least one head, got N={self.N}")
        if self.tau < 1:
            raise ConfigError(f"temporal window must be >= 1, got tau={self.tau}")
        if self.C_in < 1 or self.C_out < 1:
            raise ConfigError("channel extents must be positive")
        if self.C_e is None:
            object.__setattr__(self, "C_e", max(self.C_out // 4, 4))
        if self.C_e < 1:
            raise ConfigError(f"attention embedding width must be >= 1, got {self.C_e}")


def dependency_bound(V: int, a: float = NEGATIVE_SLOPE) -> float:
    if V < 1:
        raise ConfigError(f"joint count must be >= 1, got {V}")
    return uniform_bound(V, a)


def init_dependency(V: int, tau: int, a: float, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> Tensor:
    """A ``(tau*V, tau*V)`` dependency matrix drawn uniformly from ``[-bound, bound]``.

    The bound uses the joint count ``V`` even for ``tau > 1``.
    """
    if tau < 1:
        raise ConfigError(f"temporal window must be >= 1, got tau={tau}")
    bound = dependency_bound(V, a)
    n = tau * V
    return Tensor(sample_uniform((n, n), bound, rng, dtype), requires_grad=True)


class SlsuHead(Module):
    def __init__(self, cfg: SlsuConfig, V: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.W = init_dependency(V, cfg.tau, cfg.a, rng, dtype)
        self.E = uniform_param((cfg.C_out, cfg.C_in), cfg.C_in, rng, dtype, cfg.a)
        self.E_theta = uniform_param((cfg.C_e, cfg.C_in), cfg.C_in, rng, dtype, cfg.a)
        self.E_phi = uniform_param((cfg.C_e, cfg.C_in), cfg.C_in, rng, dtype, cfg.a)


def _as_batch(x: Tensor):
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    raise DimensionError(f"expected (B, C, T, V) or (C, T, V), got {x.shape}")


def attention_map(u: Tensor, head: SlsuHead) -> Tensor:
    """Row-stochastic ``(B, tau*V, tau*V)`` map from embedded-feature inner products.

    ``u`` is the window-unfolded input ``(B, C_in, T, tau*V)``; an unbatched
    ``(C_in, T, tau*V)`` input gives a ``(tau*V, tau*V)`` map.
    """
    u4, squeeze = _as_batch(u)
    b, _, t, n = u4.shape
    c_e = head.E_theta.shape[0]
    theta = ops.reshape(ops.pointwise_embed(u4, head.E_theta), (b, c_e * t, n))
    phi = ops.reshape(ops.pointwise_embed(u4, head.E_phi), (b, c_e * t, n))
    # averaging rather than summing over the C_e*T products keeps the logits
    # length-independent and stops early gradients from exploding
    logits = ops.mul(ops.matmul(ops.transpose(theta, (0, 2, 1)), phi), 1.0 / (c_e * t))
    a = ops.softmax_rows(logits)
    return ops.reshape(a, (n, n)) if squeeze else a


def slsu_forward(
    x: Tensor,
    cfg: SlsuConfig,
    heads: Sequence[SlsuHead],
    residual_weight: Optional[Tensor] = None,
) -> Tensor:
    """``(B, C_in, T, V) -> (B, C_out, T, V)``; unbatched input is accepted too."""
    if len(heads) != cfg.N:
        raise ConfigError(f"expected {cfg.N} heads, got {len(heads)}")
    x4, squeeze = _as_batch(x)
    b, c, t, v = x4.shape
    if c != cfg.C_in:
        raise DimensionError(f"S-LSU expects {cfg.C_in} input channels, got {c}")
    n = cfg.tau * v
    for head in heads:
        if head.W.shape != (n, n):
            raise DimensionError(f"dependency matrix {head.W.shape} does not match tau*V = {n}")

    u = ops.window_unfold(x4, cfg.tau)
    mixers = []
    for head in heads:
        if cfg.attention:
            m = ops.add(attention_map(u, head), head.W)
        else:
            m = ops.reshape(head.W, (1, n, n))
        mixers.append(ops.reshape(m, (m.shape[0], 1, n, n)))
    mix = ops.concat(mixers, axis=1)  # (B or 1, N, n, n)

    flat = ops.reshape(u, (b, 1, c * t, n))
    mixed = ops.matmul(flat, mix)  # (B, N, C*T, n)
    mixed = ops.reshape(mixed, (b, cfg.N * c, t, n))
    mixed = ops.window_fold(mixed, cfg.tau)
    embed = ops.concat([h.E for h in heads], axis=1)  # (C_out, N*C_in)
    out = ops.pointwise_embed(mixed, embed)

    if cfg.residual:
        if cfg.C_in == cfg.C_out and residual_weight is None:
            out = ops.add(out, x4)
        elif residual_weight is not None:
            out = ops.add(out, ops.pointwise_embed(x4, residual_weight))
        else:
            raise ConfigError("channel-changing S-LSU residual needs a projection weight")
    return ops.reshape(out, out.shape[1:]) if squeeze else out


class Slsu(Module):
    def __init__(self, cfg: SlsuConfig, V: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cfg = cfg
        self.V = V
        self.heads = [SlsuHead(cfg, V, rng, dtype) for _ in range(cfg.N)]
        if cfg.residual and cfg.C_in != cfg.C_out:
            self.residual = uniform_param((cfg.C_out, cfg.C_in), cfg.C_in, rng, dtype, cfg.a)
        else:
            object.__setattr__(self, "residual", None)

    def forward(self, x: Tensor) -> Tensor:
        return slsu_forward(x, self.cfg, list(self.heads), self.residual)
