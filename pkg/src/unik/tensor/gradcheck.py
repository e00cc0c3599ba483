"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from unik.tensor.core import Tensor


def numerical_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``x.data`` (perturbed in place)."""
    x.data = np.ascontiguousarray(x.data)
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return float((np.abs(a - n) / denom).max())


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between backprop and central differences for scalar ``f(x)``."""
    return grad_check_many(lambda: f(x), [x], eps)


def grad_check_many(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Like :func:`grad_check` but over several leaves of the closure ``f``."""
    for p in params:
        p.requires_grad = True
        p.grad = None
    f().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numerical_grad(f, p, eps)))
    return worst
