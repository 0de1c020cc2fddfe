"""Minimal reverse-mode autodiff: tensors, primitives, selective backward."""

from .tensor import (
    ContractError,
    DimensionError,
    GradientMap,
    NumericError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    conv2d,
    current_tape,
    detach,
    div,
    exp,
    get_default_dtype,
    leaf,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    new_tape,
    no_grad,
    relu,
    reshape,
    scale,
    set_default_dtype,
    softmax,
    sub,
    suffix_sum,
    sum,
    take,
    transpose,
)
from .gradcheck import grad_check, numerical_gradient

primitive_forward = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sum": sum,
    "mean": mean,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "suffix_sum": suffix_sum,
    "broadcast": broadcast_to,
    "reshape": reshape,
    "take": take,
    "transpose": transpose,
}
