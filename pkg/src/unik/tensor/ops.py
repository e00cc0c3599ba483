"""Differentiable operations used by the network.

Activations follow a channels-first layout. Spatial-temporal maps are
``(B, C, T, V)``; the unbatched ``(C, T, V)`` form is accepted wherever a
batch axis is optional.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from unik.tensor.core import ConfigError, DimensionError, Tensor

Number = Union[int, float]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


# -- elementwise --------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        return Tensor.from_op(a.data * s, (a,), lambda g: (g * s,))
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def square(a: Tensor) -> Tensor:
    return Tensor.from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,))


# -- reductions and shape -----------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, tensors, backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul cannot broadcast {a.shape} x {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return Tensor.from_op(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (B, in) and ``weight`` (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear expects (B, {weight.shape[-1]}) input, got {x.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor.from_op(out, parents, backward)


def _batched(x: Tensor, op: str) -> bool:
    if x.ndim == 4:
        return True
    if x.ndim == 3:
        return False
    raise DimensionError(f"{op} expects (B, C, T, V) or (C, T, V), got {x.shape}")


def _batched_outer(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``sum_b g[b] @ x[b].T`` without materialising transposed copies."""
    acc = g[0] @ x[0].T
    for i in range(1, g.shape[0]):
        acc += g[i] @ x[i].T
    return acc


def _flush_subnormal(a: np.ndarray) -> np.ndarray:
    # subnormal floats make every later BLAS call on this array very slow
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0.0
    return a


def pointwise_embed(x: Tensor, w: Tensor) -> Tensor:
    """Bias-free 1x1 convolution mixing channels at every (frame, joint) position.

    ``w`` has shape ``(C_out, C_in)`` (a trailing ``1x1`` is tolerated).
    """
    batched = _batched(x, "pointwise_embed")
    wm = w.data.reshape(w.shape[0], -1)
    c_axis = 1 if batched else 0
    if wm.shape[1] != x.shape[c_axis]:
        raise DimensionError(f"embedding expects {wm.shape[1]} input channels, got {x.shape[c_axis]}")
    xd = x.data if batched else x.data[None]
    b, c, t, s = xd.shape
    xr = xd.reshape(b, c, t * s)
    out = np.matmul(wm, xr).reshape(b, wm.shape[0], t, s)
    if not batched:
        out = out[0]

    def backward(g):
        gr = (g if batched else g[None]).reshape(b, wm.shape[0], t * s)
        gx = gw = None
        if x.requires_grad:
            gx = np.matmul(wm.T, gr).reshape(b, c, t, s)
            if not batched:
                gx = gx[0]
        if w.requires_grad:
            gw = _batched_outer(gr, xr).reshape(w.shape)
        return gx, gw

    return Tensor.from_op(out, (x, w), backward)


def temporal_conv(x: Tensor, w: Tensor, dilation: int = 1, stride: int = 1) -> Tensor:
    """Convolution along frames only (kernel ``t x 1``) with same zero padding.

    ``w`` is ``(C_out, C_in, t, 1)`` or ``(C_out, C_in, t)``. Output length is
    ``ceil(T / stride)``.
    """
    batched = _batched(x, "temporal_conv")
    if w.ndim not in (3, 4) or (w.ndim == 4 and w.shape[3] != 1):
        raise DimensionError(f"temporal kernel must be (C_out, C_in, t, 1), got {w.shape}")
    c_out, c_in, ksize = w.shape[:3]
    if ksize % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {ksize}")
    if dilation < 1 or stride < 1:
        raise ConfigError(f"dilation and stride must be >= 1, got {dilation}, {stride}")
    xd = x.data if batched else x.data[None]
    b, c, t_in, v = xd.shape
    if c != c_in:
        raise DimensionError(f"temporal_conv expects {c_in} input channels, got {c}")
    t_out = (t_in - 1) // stride + 1 if t_in > 0 else 0
    if t_out < 1:
        raise DimensionError("temporal_conv produced an empty output")

    pad = (ksize - 1) * dilation // 2
    xp = np.zeros((b, c, t_in + 2 * pad, v), dtype=xd.dtype)
    xp[:, :, pad : pad + t_in] = xd
    span = stride * (t_out - 1) + 1
    cols = np.empty((b, c, ksize, t_out, v), dtype=xd.dtype)
    for k in range(ksize):
        start = k * dilation
        cols[:, :, k] = xp[:, :, start : start + span : stride]
    cols = cols.reshape(b, c * ksize, t_out * v)
    wm = w.data.reshape(c_out, c_in * ksize)
    out = np.matmul(wm, cols).reshape(b, c_out, t_out, v)
    if not batched:
        out = out[0]

    def backward(g):
        gr = (g if batched else g[None]).reshape(b, c_out, t_out * v)
        gx = gw = None
        if w.requires_grad:
            gw = _batched_outer(gr, cols).reshape(w.shape)
        if x.requires_grad:
            gcols = np.matmul(wm.T, gr).reshape(b, c, ksize, t_out, v)
            gxp = np.zeros_like(xp)
            for k in range(ksize):
                start = k * dilation
                gxp[:, :, start : start + span : stride] += gcols[:, :, k]
            gx = gxp[:, :, pad : pad + t_in]
            if not batched:
                gx = gx[0]
        return gx, gw

    return Tensor.from_op(out, (x, w), backward)


def receptive_field(ksize: int, dilation: int) -> int:
    return (ksize - 1) * dilation + 1


# -- temporal windows over the joint axis ------------------------------------


def window_offsets(tau: int) -> range:
    """Frame offsets covered by a window of ``tau`` frames (even sizes lean forward)."""
    if tau < 1:
        raise ConfigError(f"window size must be >= 1, got {tau}")
    return range(-((tau - 1) // 2), (tau - 1) - (tau - 1) // 2 + 1)


def _shift_frames(a: np.ndarray, offset: int) -> np.ndarray:
    """``out[..., t, :] = a[..., t + offset, :]`` with zeros outside the clip."""
    out = np.zeros_like(a)
    t = a.shape[-2]
    if offset >= 0:
        if offset < t:
            out[..., : t - offset, :] = a[..., offset:, :]
    elif -offset < t:
        out[..., -offset:, :] = a[..., : t + offset, :]
    return out


def window_unfold(x: Tensor, tau: int) -> Tensor:
    """Concatenate the joints of ``tau`` neighbouring frames: (.., T, V) -> (.., T, tau*V)."""
    offsets = list(window_offsets(tau))
    if tau == 1:
        return x
    out = np.concatenate([_shift_frames(x.data, o) for o in offsets], axis=-1)
    v = x.shape[-1]

    def backward(g):
        gx = np.zeros_like(x.data)
        for i, o in enumerate(offsets):
            gx += _shift_frames(g[..., i * v : (i + 1) * v], -o)
        return (gx,)

    return Tensor.from_op(out, (x,), backward)


def window_fold(u: Tensor, tau: int) -> Tensor:
    """Sum the ``tau`` per-offset joint blocks: (.., T, tau*V) -> (.., T, V)."""
    if tau == 1:
        return u
    if u.shape[-1] % tau:
        raise DimensionError(f"joint axis {u.shape[-1]} is not a multiple of tau={tau}")
    v = u.shape[-1] // tau
    out = u.data.reshape(u.shape[:-1] + (tau, v)).sum(axis=-2)
    return Tensor.from_op(out, (u,), lambda g: (np.tile(g, (1,) * (g.ndim - 1) + (tau,)),))


# -- normalisation, softmax and losses -----------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = _flush_subnormal(e / e.sum(axis=-1, keepdims=True))

    def backward(g):
        return (_flush_subnormal(s * (g - (g * s).sum(axis=-1, keepdims=True))),)

    return Tensor.from_op(s, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return Tensor.from_op(out, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (B, C) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / b),)

    return Tensor.from_op(loss, (logits,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    axis: int = 1,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over every axis except ``axis``.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, exponential average with
    ``momentum``). In eval mode the running buffers are used.
    """
    axis = axis % x.ndim
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    count = int(np.prod([x.shape[i] for i in reduce_axes])) if reduce_axes else 1
    if x.size == 0 or count == 0:
        raise DimensionError("batch_norm over an empty normalisation group")
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm affine shape must be ({c},), got {gamma.shape}, {beta.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    bshape = tuple(bshape)

    if training:
        mu = x.data.mean(axis=reduce_axes)
        xc = x.data - mu.reshape(bshape)
        var = (xc * xc).mean(axis=reduce_axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mu = running_mean.astype(x.dtype)
        xc = x.data - mu.reshape(bshape)
        var = running_var.astype(x.dtype)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=reduce_axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=reduce_axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                m1 = gxhat.mean(axis=reduce_axes, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=reduce_axes, keepdims=True)
                gx = (gxhat - m1 - xhat * m2) * inv_std.reshape(bshape)
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor.from_op(out, (x, gamma, beta), backward)
