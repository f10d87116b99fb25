"""Minimal tensor library with reverse-mode differentiation."""

from . import ops
from .gradcheck import GradCheckReport, grad_check
from .nn import BatchNorm1d, BiLSTM, Conv1d, LayerNorm, Linear, LSTMDirection, Module, Parameter
from .ops import (
    add, batch_norm, concat, conv1d, cross_entropy, divide, dropout, global_average_pool,
    layer_norm, linear, lstm, matmul, multiply, relu, reshape, sigmoid, slice, softmax,
    sub, tanh, transpose,
)
from .optim import Adam, AdamState, adam_step
from .tensor import ShapeError, Tensor, count_macs, mac_tag, no_grad

__all__ = [
    "Adam", "AdamState", "BatchNorm1d", "BiLSTM", "Conv1d", "GradCheckReport", "LSTMDirection",
    "LayerNorm", "Linear", "Module", "Parameter", "ShapeError", "Tensor", "adam_step", "add",
    "batch_norm", "concat", "conv1d", "count_macs", "cross_entropy", "divide", "dropout",
    "global_average_pool", "grad_check", "layer_norm", "linear", "lstm", "mac_tag", "matmul",
    "multiply", "no_grad", "ops", "relu", "reshape", "sigmoid", "slice", "softmax", "sub", "tanh",
    "transpose",
]
