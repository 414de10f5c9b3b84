"""Adam with per-group learning rates, global-norm gradient clipping, and EMA updates."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamState:
    """Per-tensor moment buffers plus the shared step count."""

    def __init__(self, shape, dtype):
        self.step_count = 0
        self.first_moment = np.zeros(shape, dtype)
        self.second_moment = np.zeros(shape, dtype)


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on param."""
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
    return param


class Adam:
    """Optimizer over [(tensors, lr), ...] groups; state keyed by tensor identity."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._state = {}
        for params, _ in self.groups:
            for p in params:
                self._state[id(p)] = AdamState(p.data.shape, p.data.dtype)

    def step(self):
        for params, lr in self.groups:
            for p in params:
                if p.grad is None:
                    continue
                adam_step(p.data, p.grad, self._state[id(p)], lr,
                          self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.grad = None

    def state_for(self, p):
        return self._state[id(p)]


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm (callers log min(norm, max_norm) as the applied norm).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    grads = []
    for p in params:
        g = p.grad if isinstance(p, Tensor) else p
        if g is None:
            continue
        grads.append(g)
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def ema_update(target_params, online_params, momentum):
    """target <- momentum * target + (1 - momentum) * online, in place."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    for tp, op in zip(target_params, online_params):
        td = tp.data if isinstance(tp, Tensor) else tp
        od = op.data if isinstance(op, Tensor) else op
        td *= momentum
        td += (1.0 - momentum) * od
