"""Dense/sparse arrays with reverse-mode differentiation and AdamW."""
from .autodiff import NumericError, Tape, Tensor, parameter
from .ops import (
    add,
    add_bias,
    dropout,
    gat_attention,
    layer_norm,
    linear,
    matmul,
    relu,
    softmax,
    softmax_cross_entropy,
    spmm,
    sum_all,
    take_rows,
)
from .optim import AdamW, AdamWState, adamw_step
from .sparse import SparseMatrix

__all__ = [
    "AdamW",
    "AdamWState",
    "NumericError",
    "SparseMatrix",
    "Tape",
    "Tensor",
    "adamw_step",
    "add",
    "add_bias",
    "dropout",
    "gat_attention",
    "layer_norm",
    "linear",
    "matmul",
    "parameter",
    "relu",
    "softmax",
    "softmax_cross_entropy",
    "spmm",
    "sum_all",
    "take_rows",
]
