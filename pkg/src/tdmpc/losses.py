"""Training objectives: the joint model loss over imagined rollouts, and the
policy improvement loss evaluated on detached latents.

Both losses flatten the (horizon+1) per-step batches into one large batch per
network head, so each update costs a fixed number of matmul calls regardless
of horizon. Per-step temporal weights lambda^t are applied per element and the
total is normalized by the weight sum and batch size.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .regression import two_hot_encode


class ValueScale:
    """Running scale of the value distribution: EMA of the (5th, 95th) percentile
    span, floored at 1. The policy objective divides Q by this so the entropy
    term keeps a consistent relative weight across reward scales."""

    def __init__(self, momentum=0.99, low=5.0, high=95.0):
        self.momentum = float(momentum)
        self.low = float(low)
        self.high = float(high)
        self.p_low = None
        self.p_high = None

    def update(self, values):
        lo, hi = np.percentile(values, [self.low, self.high])
        if self.p_low is None:
            self.p_low, self.p_high = float(lo), float(hi)
        else:
            m = self.momentum
            self.p_low = m * self.p_low + (1.0 - m) * float(lo)
            self.p_high = m * self.p_high + (1.0 - m) * float(hi)

    @property
    def scale(self):
        if self.p_low is None:
            return 1.0
        return max(1.0, self.p_high - self.p_low)


def _flatten_tasks(task_ids, steps):
    if task_ids is None:
        return None
    return np.tile(np.asarray(task_ids), steps)


def temporal_weights(lam, steps, dtype=np.float64):
    return (lam ** np.arange(steps)).astype(dtype)


def model_loss(model, batch, rng):
    """Joint consistency / reward / value loss over an imagined rollout.

    batch: obs (H+2, B, obs_max), actions (H+1, B, act_max), rewards (H+1, B),
    task_ids (B,) or None. Returns (loss, stats, latents) where latents is the
    detached (H+1, B, latent) rollout for the policy update.
    """
    cfg = model.config
    obs, actions, rewards = batch["obs"], batch["actions"], batch["rewards"]
    task_ids = batch.get("task_ids")
    steps = cfg.horizon + 1
    if obs.shape[0] != steps + 1 or actions.shape[0] != steps:
        raise ValueError(f"batch expects {steps + 1} obs / {steps} action steps, "
                         f"got {obs.shape[0]} / {actions.shape[0]}")
    B = obs.shape[1]
    task_flat = _flatten_tasks(task_ids, steps)

    # stop-gradient targets: every next observation encoded with the online encoder
    with nn.no_grad():
        z_tgt = model.encode(obs[1:].reshape(steps * B, -1), task_flat).data
        q_tgt = model.td_target(rewards.reshape(steps * B).astype(np.float64),
                                z_tgt, task_flat, rng=rng)
    if not np.all(np.isfinite(q_tgt)):
        raise ValueError("non-finite TD targets: the encoder or target value "
                         "heads have diverged")
    q_tgt_hot = two_hot_encode(q_tgt, model.bins, dtype=model.dtype)
    r_hot = two_hot_encode(rewards.reshape(steps * B), model.bins, dtype=model.dtype)

    # latent rollout from the first observation
    z = model.encode(obs[0], task_ids)
    zs = [z]
    for t in range(steps):
        z = model.next(z, actions[t], task_ids)
        zs.append(z)
    z_pred = nn.concat(zs[1:], axis=0)        # (steps*B, latent), t-major
    z_in = nn.concat(zs[:-1], axis=0)
    a_flat = actions.reshape(steps * B, -1)

    consistency = nn.tsum(nn.square(z_pred - z_tgt), axis=-1)
    r_logits = model.reward_logits(z_in, a_flat, task_flat)
    reward_ce = nn.soft_cross_entropy(r_logits, r_hot)
    q_logits = model.q_logits(z_in, a_flat, task_flat, training=True, rng=rng)
    value_ce = nn.tmean(nn.soft_cross_entropy(q_logits, q_tgt_hot), axis=0)

    w = np.repeat(temporal_weights(cfg.temporal_coef, steps), B).astype(model.dtype)
    norm = 1.0 / (B * float(temporal_weights(cfg.temporal_coef, steps).sum()))
    c_term = nn.tsum(consistency * w) * (cfg.consistency_coef * norm)
    r_term = nn.tsum(reward_ce * w) * (cfg.reward_coef * norm)
    v_term = nn.tsum(value_ce * w) * (cfg.value_coef * norm)
    loss = c_term + r_term + v_term

    latents = np.stack([t.data for t in zs[:-1]])
    stats = {
        "loss_consistency": float(c_term.data),
        "loss_reward": float(r_term.data),
        "loss_value": float(v_term.data),
        "loss_model": float(loss.data),
    }
    return loss, stats, latents


def policy_loss(model, latents, task_ids, rng, value_scale, return_aux=False):
    """Max-entropy policy improvement on detached latents.

    Maximizes scaled ensemble-mean Q plus entropy; gradients reach only the
    policy head (Q and embedding gradients accumulated here are discarded by
    the optimizer split). value_scale is updated with the fresh Q batch before
    the loss is formed. With return_aux, the pre-squash mean/log_std nodes are
    returned so callers can inspect their gradients after backward.
    """
    cfg = model.config
    steps, B = latents.shape[0], latents.shape[1]
    z_flat = latents.reshape(steps * B, -1)
    task_flat = _flatten_tasks(task_ids, steps)

    action, log_std, entropy, mean = model.sample_policy(
        z_flat, task_flat, rng=rng, return_mean=True)
    q_logits = model.q_logits(z_flat, action, task_flat, training=False)
    q_mean = nn.tmean(model.decode_values(q_logits), axis=0)   # (steps*B,)

    value_scale.update(q_mean.data)
    inv_scale = 1.0 / value_scale.scale

    w = np.repeat(temporal_weights(cfg.temporal_coef, steps), B).astype(model.dtype)
    norm = 1.0 / (B * float(temporal_weights(cfg.temporal_coef, steps).sum()))
    objective = q_mean * inv_scale + entropy * cfg.entropy_coef
    loss = nn.tsum(objective * w) * (-norm)

    stats = {
        "loss_policy": float(loss.data),
        "pi_entropy": float(entropy.data.mean()),
        "value_scale": value_scale.scale,
    }
    if return_aux:
        return loss, stats, {"mean": mean, "log_std": log_std, "steps": steps}
    return loss, stats
