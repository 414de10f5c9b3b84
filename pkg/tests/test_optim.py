"""Optimizer arithmetic against hand-rolled references."""

import numpy as np

from tdmpc import nn
from tdmpc.nn import Tensor


def reference_adam(param, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    p = param.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_first_step_is_signlike():
    # with fresh moments the bias-corrected update is lr * g / (|g| + eps)
    p = np.array([1.0, -2.0, 0.5])
    state = nn.AdamState(p.shape, p.dtype)
    g = np.array([0.3, -0.7, 0.0])
    nn.adam_step(p, g, state, lr=0.01)
    expect = np.array([1.0 - 0.01, -2.0 + 0.01, 0.5])
    assert np.allclose(p, expect, atol=1e-9)


def test_adam_tracks_reference_over_steps(rng):
    p0 = rng.standard_normal(6)
    grads = [rng.standard_normal(6) for _ in range(5)]
    p = p0.copy()
    state = nn.AdamState(p.shape, p.dtype)
    for g in grads:
        nn.adam_step(p, g, state, lr=3e-3)
    assert np.allclose(p, reference_adam(p0, grads, 3e-3), atol=1e-12)


def test_adam_optimizer_groups_and_skips_missing_grads(rng):
    a = Tensor(np.zeros(3), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    opt = nn.Adam([([a], 0.1), ([b], 0.001)])
    a.grad = np.ones(3)
    opt.step()  # b has no grad and must stay untouched
    assert np.allclose(a.data, -0.1, atol=1e-9)
    assert np.all(b.data == 0.0)
    opt.zero_grad()
    assert a.grad is None


def test_adam_state_is_per_tensor(rng):
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    opt = nn.Adam([([a, b], 0.05)])
    a.grad = np.ones(2)
    opt.step()
    assert opt.state_for(a).step_count == 1
    assert opt.state_for(b).step_count == 0


def test_clip_grad_norm_scales_to_bound():
    p = Tensor(np.zeros(16), requires_grad=True)
    p.grad = np.full(16, 10.0)  # norm 40
    pre = nn.clip_grad_norm([p], 20.0)
    assert abs(pre - 40.0) < 1e-9
    assert abs(float(np.linalg.norm(p.grad)) - 20.0) < 1e-6
    assert np.allclose(p.grad, 5.0)  # scaled by exactly max/norm = 0.5


def test_clip_grad_norm_leaves_small_grads_alone():
    p = Tensor(np.zeros(4), requires_grad=True)
    p.grad = np.array([1.0, 2.0, 2.0, 0.0])
    pre = nn.clip_grad_norm([p], 20.0)
    assert abs(pre - 3.0) < 1e-12
    assert np.array_equal(p.grad, [1.0, 2.0, 2.0, 0.0])


def test_clip_grad_norm_global_across_tensors():
    a = Tensor(np.zeros(1), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    a.grad = np.array([30.0])
    b.grad = np.array([40.0])  # joint norm 50
    pre = nn.clip_grad_norm([a, b], 10.0)
    assert abs(pre - 50.0) < 1e-9
    assert np.allclose([a.grad[0], b.grad[0]], [6.0, 8.0])


def test_ema_update_convex_combination():
    t = Tensor(np.array([1.0, 1.0]))
    o = Tensor(np.array([2.0, 0.0]))
    nn.ema_update([t], [o], momentum=0.99)
    assert np.allclose(t.data, [1.01, 0.99])
    nn.ema_update([t], [o], momentum=0.0)  # momentum 0 copies the online values
    assert np.allclose(t.data, o.data)
