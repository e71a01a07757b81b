"""Minimal dense tensors, reverse-mode autodiff and AdamW."""

from dmae.tensor import ops
from dmae.tensor.checkpoint import load_checkpoint, save_checkpoint
from dmae.tensor.core import (
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    grad_enabled,
    no_grad,
    recording,
)
from dmae.tensor.module import Module, parameter
from dmae.tensor.ops import (
    concat,
    conv2d,
    cross_entropy,
    gelu,
    layer_norm,
    linear,
    log_softmax_lastdim,
    matmul,
    softmax_lastdim,
    stack,
)
from dmae.tensor.optim import AdamW, AdamWState, StepDecay, TrainingDivergenceError, adamw_step

__all__ = [
    "AdamW",
    "AdamWState",
    "ContractError",
    "DimensionError",
    "Module",
    "StepDecay",
    "Tape",
    "Tensor",
    "TrainingDivergenceError",
    "adamw_step",
    "as_tensor",
    "backward",
    "concat",
    "conv2d",
    "cross_entropy",
    "gelu",
    "grad_enabled",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log_softmax_lastdim",
    "matmul",
    "no_grad",
    "ops",
    "parameter",
    "recording",
    "save_checkpoint",
    "softmax_lastdim",
    "stack",
]
