from unik.tensor.core import (
    DEFAULT_DTYPE,
    ConfigError,
    DimensionError,
    Tensor,
    grad_enabled,
    no_grad,
    parameter,
    tensor,
)
from unik.tensor.gradcheck import grad_check, grad_check_many, numerical_grad, relative_error
from unik.tensor.optim import SGD, OptimizerState, sgd_step, step_lr

__all__ = [
    "DEFAULT_DTYPE",
    "ConfigError",
    "DimensionError",
    "Tensor",
    "grad_enabled",
    "no_grad",
    "parameter",
    "tensor",
    "grad_check",
    "grad_check_many",
    "numerical_grad",
    "relative_error",
    "SGD",
    "OptimizerState",
    "sgd_step",
    "step_lr",
]
