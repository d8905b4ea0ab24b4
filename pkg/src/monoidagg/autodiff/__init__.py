"""Minimal reverse-mode autodiff: tensors, ops, optimizer, checkpoints, RNG."""

from .engine import (
    AutodiffError,
    GraphError,
    ShapeError,
    Tensor,
    backward,
    constant,
    no_grad,
    record,
    reset_graph,
    tensor,
    zeros,
)
from .ops import (
    add,
    bce,
    bce_elem,
    concat,
    emax,
    gather_rows,
    gelu,
    matmul,
    mse,
    mul,
    reduce_max0,
    reduce_mean,
    reduce_min0,
    reduce_sum,
    reshape,
    sigmoid,
    smul,
    sorted_tree_sum,
    sqrt0,
    square,
    stack_rows,
    sub,
    take_slice,
    tanh_,
    tree_sum,
)
from .optim import ParameterStore, adam_step, init_params
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .rng import Prng

__all__ = [
    "AutodiffError", "GraphError", "ShapeError", "Tensor", "backward",
    "constant", "no_grad", "record", "reset_graph", "tensor", "zeros",
    "add", "bce", "bce_elem", "concat", "emax", "gather_rows", "gelu",
    "matmul", "mse", "mul", "reduce_max0", "reduce_mean", "reduce_min0",
    "reduce_sum", "reshape", "sigmoid", "smul", "sorted_tree_sum", "sqrt0",
    "square", "stack_rows", "sub", "take_slice", "tanh_", "tree_sum",
    "ParameterStore", "adam_step", "init_params",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "GradCheckReport", "grad_check", "Prng",
]
