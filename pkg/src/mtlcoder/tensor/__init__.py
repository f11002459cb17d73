"""Dense tensors, reverse-mode autodiff, initialization and Adam."""

from .core import (
    OPS,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    forward_op,
    gather_rows,
    getitem,
    gradient_reversal,
    log,
    lstm_cell,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    scale,
    sigmoid,
    sq_frobenius,
    sub,
    sum,
    tanh,
    topological_order,
    transpose,
)
from .init import glorot_bound, glorot_uniform_init, zeros_param
from .optim import DEFAULT_LR, FINETUNE_LR, AdamState, adam_step

__all__ = [
    "OPS", "Tensor", "add", "as_tensor", "backward", "clip", "concat", "forward_op",
    "gather_rows", "getitem", "gradient_reversal", "log", "lstm_cell", "matmul", "mean", "mul", "neg",
    "no_grad", "reshape", "scale", "sigmoid", "sq_frobenius", "sub", "sum", "tanh",
    "topological_order", "transpose", "glorot_bound", "glorot_uniform_init", "zeros_param",
    "DEFAULT_LR", "FINETUNE_LR", "AdamState", "adam_step",
]
