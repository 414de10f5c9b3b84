"""Layer modules over the tape ops: plain linear, linear+LayerNorm+activation,
and their stacked-ensemble variants (all heads evaluated in one batched matmul).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-5


class Module:
    """Parameter container with insertion-ordered registration (drives serialization)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def register(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        else:
            self._modules[name] = value
        return value

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name if not prefix else f"{prefix}.{name}"), p
        for name, m in self._modules.items():
            sub = name if not prefix else f"{prefix}.{name}"
            yield from m.named_parameters(sub)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng, shape, bound, dtype):
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    """y = x W^T + b. zero_init makes the layer output exactly zero at start,
    which the distributional heads use so initial bin predictions are uniform."""

    def __init__(self, in_dim, out_dim, rng, dtype=np.float32, zero_init=False):
        super().__init__()
        if zero_init:
            self.weight = self.register("weight", Tensor(np.zeros((out_dim, in_dim), dtype), requires_grad=True))
            self.bias = self.register("bias", Tensor(np.zeros(out_dim, dtype), requires_grad=True))
        else:
            bound = 1.0 / np.sqrt(in_dim)
            self.weight = self.register("weight", _uniform(rng, (out_dim, in_dim), bound, dtype))
            self.bias = self.register("bias", _uniform(rng, out_dim, bound, dtype))

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class NormedLinear(Module):
    """Linear -> (Dropout) -> LayerNorm -> activation, activation in {mish, simnorm, None}."""

    def __init__(self, in_dim, out_dim, rng, act="mish", dtype=np.float32,
                 dropout=0.0, simnorm_v=8, simnorm_tau=1.0):
        super().__init__()
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = self.register("weight", _uniform(rng, (out_dim, in_dim), bound, dtype))
        self.bias = self.register("bias", _uniform(rng, out_dim, bound, dtype))
        self.ln_scale = self.register("ln_scale", Tensor(np.ones(out_dim, dtype), requires_grad=True))
        self.ln_shift = self.register("ln_shift", Tensor(np.zeros(out_dim, dtype), requires_grad=True))
        if act not in ("mish", "simnorm", None):
            raise ValueError(f"unknown activation {act!r}")
        self.act = act
        self.dropout_rate = float(dropout)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.simnorm_v = simnorm_v
        self.simnorm_tau = simnorm_tau

    def __call__(self, x, rng=None, training=False):
        y = T.linear(x, self.weight, self.bias)
        if self.dropout_rate > 0.0:
            y = T.dropout(y, self.dropout_rate, rng, training)
        y = T.layer_norm(y, self.ln_scale, self.ln_shift, eps=LN_EPS)
        if self.act == "mish":
            return T.mish(y)
        if self.act == "simnorm":
            return T.simnorm(y, self.simnorm_v, self.simnorm_tau)
        return y


class EnsembleLinear(Module):
    """n independent linear heads as one [n, out, in] weight stack."""

    def __init__(self, n, in_dim, out_dim, rng, dtype=np.float32, zero_init=False):
        super().__init__()
        if zero_init:
            self.weight = self.register("weight", Tensor(np.zeros((n, out_dim, in_dim), dtype), requires_grad=True))
            self.bias = self.register("bias", Tensor(np.zeros((n, out_dim), dtype), requires_grad=True))
        else:
            bound = 1.0 / np.sqrt(in_dim)
            self.weight = self.register("weight", _uniform(rng, (n, out_dim, in_dim), bound, dtype))
            self.bias = self.register("bias", _uniform(rng, (n, out_dim), bound, dtype))

    def __call__(self, x):
        return T.ensemble_linear(x, self.weight, self.bias)


class EnsembleNormedLinear(Module):
    """NormedLinear stacked across n heads; per-head LayerNorm affine."""

    def __init__(self, n, in_dim, out_dim, rng, act="mish", dtype=np.float32, dropout=0.0):
        super().__init__()
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = self.register("weight", _uniform(rng, (n, out_dim, in_dim), bound, dtype))
        self.bias = self.register("bias", _uniform(rng, (n, out_dim), bound, dtype))
        self.ln_scale = self.register("ln_scale", Tensor(np.ones((n, 1, out_dim), dtype), requires_grad=True))
        self.ln_shift = self.register("ln_shift", Tensor(np.zeros((n, 1, out_dim), dtype), requires_grad=True))
        self.act = act
        self.dropout_rate = float(dropout)

    def __call__(self, x, rng=None, training=False):
        y = T.ensemble_linear(x, self.weight, self.bias)
        if self.dropout_rate > 0.0:
            y = T.dropout(y, self.dropout_rate, rng, training)
        y = T.layer_norm(y, self.ln_scale, self.ln_shift, eps=LN_EPS)
        if self.act == "mish":
            return T.mish(y)
        return y
