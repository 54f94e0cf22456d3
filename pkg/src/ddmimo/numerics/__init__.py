from .autodiff import (
    ContractError,
    GradTape,
    NonFiniteError,
    SingularMatrixError,
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    hadamard,
    inverse,
    log,
    matmul,
    maximum,
    mean,
    mul,
    neg,
    norm1,
    norm2sq,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum,
    take,
    tanh,
    trace,
    transpose,
    value_and_grad,
)
from .optim import AdamState, adam_step, flatten, param_size, plateau_decay, unflatten
from .rng import Rng

__all__ = [
    "ContractError", "GradTape", "NonFiniteError", "SingularMatrixError", "Tensor",
    "absolute", "add", "as_tensor", "backward", "concat", "div", "exp", "hadamard",
    "inverse", "log", "matmul", "maximum", "mean", "mul", "neg", "norm1", "norm2sq",
    "relu", "reshape", "sigmoid", "softmax", "sub", "sum", "take", "tanh", "trace",
    "transpose", "value_and_grad", "AdamState", "adam_step", "flatten", "param_size",
    "plateau_decay", "unflatten", "Rng",
]
