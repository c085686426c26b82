"""Reverse-mode autodiff engine: tensors, operations, optimizers, checking."""

from .tensor import (
    EngineError,
    ShapeError,
    Tensor,
    Tape,
    as_tensor,
    full,
    set_finite_checks,
    add,
    mul,
    minimum,
    relu,
    sigmoid,
    reshape,
    sum_all,
    conv2d,
    maxpool2d,
    global_avg_pool,
    global_max_pool,
    fully_connected,
    bce_loss,
    mse_loss,
    backward,
)
from .optim import SGD, Adam, decayed_lr
from .gradcheck import CheckResult, CheckSpec, grad_check, run_checks, standard_checks
from .serialize import FormatError, read_tensor, write_tensor

__all__ = [
    "EngineError", "ShapeError", "Tensor", "Tape", "as_tensor", "full",
    "set_finite_checks", "add", "mul", "minimum", "relu", "sigmoid",
    "reshape", "sum_all", "conv2d", "maxpool2d", "global_avg_pool",
    "global_max_pool", "fully_connected", "bce_loss", "mse_loss", "backward",
    "SGD", "Adam", "decayed_lr",
    "CheckResult", "CheckSpec", "grad_check", "run_checks", "standard_checks",
    "FormatError", "read_tensor", "write_tensor",
]
