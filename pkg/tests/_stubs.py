"""Analytic stand-in models and reference implementations shared by tests."""

from types import SimpleNamespace

import numpy as np

from tdmpc import nn
from tdmpc.regression import BinSpec, two_hot_encode


class QuadraticActionModel:
    """Analytic stand-in: static latent, reward -(a - target)^2 summed over
    dims, fixed per-head terminal values. Logits are exact two-hot encodings,
    so decoded rewards match the formula to round-trip precision."""

    multitask = False
    dtype = np.float32

    def __init__(self, act_dim=1, target=0.3, terminal=(0.0, 0.0), mask=None):
        self.bins = BinSpec(101, -10.0, 10.0)
        self.config = SimpleNamespace(action_dim_max=act_dim)
        self.target = float(target)
        self.terminal = terminal
        self._mask = (np.ones(act_dim, np.float32) if mask is None
                      else np.asarray(mask, np.float32))

    def _hot(self, values):
        hot = two_hot_encode(np.asarray(values, np.float64), self.bins)
        return np.log(hot + 1e-30)

    def action_mask(self, task_id, batch_shape=()):
        return np.broadcast_to(self._mask, batch_shape + self._mask.shape).copy()

    def task_discounts(self, task_ids):
        return 0.99

    def next(self, z, actions, task_ids=None):
        return nn.Tensor(np.array(z, np.float32))

    def reward_logits(self, z, actions, task_ids=None):
        r = -np.sum((np.asarray(actions) - self.target) ** 2, axis=-1)
        return nn.Tensor(self._hot(r))

    def q_logits(self, z, actions, task_ids=None, target=False, training=False, rng=None):
        n = np.shape(z)[0]
        rows = [np.broadcast_to(self._hot([v])[0], (n, self.bins.num_bins))
                for v in self.terminal]
        return nn.Tensor(np.stack(rows))

    def sample_policy(self, z, task_ids=None, rng=None, deterministic=False,
                      return_mean=False):
        n, a_dim = np.shape(z)[0], self._mask.shape[0]
        if deterministic or rng is None:
            a = np.zeros((n, a_dim), np.float32)
        else:
            a = rng.uniform(-1.0, 1.0, (n, a_dim)).astype(np.float32) * self._mask
        t, zero = nn.Tensor(a), nn.Tensor(np.zeros(n, np.float32))
        return (t, zero, zero, t) if return_mean else (t, zero, zero)


class NanRewardModel(QuadraticActionModel):
    def reward_logits(self, z, actions, task_ids=None):
        out = super().reward_logits(z, actions, task_ids).data
        return nn.Tensor(np.full_like(out, np.nan))


class DisagreeingHeadsModel(QuadraticActionModel):
    """Two value heads that split further apart the larger the action: head
    values 2 +- spread * mean|a|. The ensemble mean stays flat, so only the
    uncertainty penalty distinguishes trajectories by their spread."""

    def __init__(self, act_dim=1, target=0.3, spread=10.0):
        super().__init__(act_dim=act_dim, target=target)
        self.spread = float(spread)

    def q_logits(self, z, actions, task_ids=None, target=False, training=False, rng=None):
        s = self.spread * np.abs(np.asarray(actions)).mean(axis=-1)
        lo = self._hot(2.0 - s)
        hi = self._hot(2.0 + s)
        return nn.Tensor(np.stack([lo, hi]))


def reference_mppi(actions, scores, cfg):
    order = np.argsort(scores)[-cfg.num_elites:]
    es, ea = scores[order], actions[order]
    w = np.exp((es - es.max()) / cfg.temperature)
    m = (w[:, None, None] * ea).sum(0) / w.sum()
    v = (w[:, None, None] * (ea - m) ** 2).sum(0) / w.sum()
    return m, np.clip(np.sqrt(v), cfg.min_std, cfg.max_std)
