"""Minimal reverse-mode MLP substrate: tensors, layers, optimizer, EMA, serialization."""

from .tensor import (
    Tensor, no_grad, grad_enabled,
    add, mul, square, tsum, tmean, concat, slice_last, reshape,
    linear, ensemble_linear, layer_norm, mish, tanh, texp, clamp,
    simnorm, dropout, soft_cross_entropy, bin_expectation, symexp_t, embedding,
)
from .layers import Module, Linear, NormedLinear, EnsembleLinear, EnsembleNormedLinear, LN_EPS
from .optim import Adam, AdamState, adam_step, clip_grad_norm, ema_update
from .serialize import save_tensors, load_tensors, ContainerError

__all__ = [
    "Tensor", "no_grad", "grad_enabled",
    "add", "mul", "square", "tsum", "tmean", "concat", "slice_last", "reshape",
    "linear", "ensemble_linear", "layer_norm", "mish", "tanh", "texp", "clamp",
    "simnorm", "dropout", "soft_cross_entropy", "bin_expectation", "symexp_t", "embedding",
    "Module", "Linear", "NormedLinear", "EnsembleLinear", "EnsembleNormedLinear", "LN_EPS",
    "Adam", "AdamState", "adam_step", "clip_grad_norm", "ema_update",
    "save_tensors", "load_tensors", "ContainerError",
]
