# Reverse-mode autodiff engine
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    cross_entropy,
    exp,
    lift,
    log,
    matmul,
    mean,
    mul,
    reshape,
    softmax,
    stack,
    sub,
    sum_,
    tanh,
)
from .optim import Adam, adam_step

__all__ = [
    "Tape", "Tensor", "add", "backward", "cross_entropy", "exp", "lift", "log",
    "matmul", "mean", "mul", "reshape", "softmax", "stack", "sub", "sum_", "tanh",
    "Adam", "adam_step",
]
