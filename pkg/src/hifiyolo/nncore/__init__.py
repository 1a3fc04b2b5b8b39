"""Small reverse-mode autodiff engine over numpy arrays."""

from . import functional
from .checkpoint import load_tensors, save_tensors
from .functional import (
    avg_pool2d,
    base_grid,
    bce_with_logits,
    channel_concat,
    concat,
    conv2d,
    grid_sample,
    matmul,
    max_pool2d,
    resize,
    scaled_dot_attention,
    sigmoid,
    silu,
    softmax,
)
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .module import Conv, Module, parameter
from .optim import AdamW
from .tensor import ShapeError, Tensor, as_tensor, no_grad

__all__ = [
    "AdamW",
    "Conv",
    "GradCheckError",
    "GradCheckReport",
    "Module",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "avg_pool2d",
    "base_grid",
    "bce_with_logits",
    "channel_concat",
    "concat",
    "conv2d",
    "functional",
    "grad_check",
    "grid_sample",
    "load_tensors",
    "matmul",
    "max_pool2d",
    "no_grad",
    "parameter",
    "resize",
    "save_tensors",
    "scaled_dot_attention",
    "sigmoid",
    "silu",
    "softmax",
]
