"""Sampling-based trajectory optimization in latent space.

Each decision step rolls candidate action sequences through the learned
dynamics, scores them by discounted predicted reward plus a terminal value,
and refits a diagonal Gaussian over sequences to an exponentially weighted
elite set. A slice of the candidates is drawn from the learned policy prior;
the Gaussian mean is warm-started from the previous step's solution shifted
by one, and the std is reset each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .regression import two_hot_decode


class PlanningError(RuntimeError):
    """Raised when trajectory scoring or the elite refit produces non-finite values."""


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 3
    iterations: int = 6
    iterations_bonus: int = 2          # extra iterations for wide action spaces
    iterations_bonus_min_dim: int = 20
    population: int = 512
    policy_prior_samples: int = 24
    num_elites: int = 64
    temperature: float = 0.5
    min_std: float = 0.05
    max_std: float = 2.0
    uncertainty_coef: float = 0.0

    def validate(self):
        if self.num_elites < 1 or self.num_elites > self.population:
            raise ValueError("num_elites must be in [1, population]")
        if self.policy_prior_samples < 0 or self.policy_prior_samples > self.population:
            raise ValueError("policy_prior_samples must be in [0, population]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.min_std <= self.max_std:
            raise ValueError("need 0 < min_std <= max_std")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        return self


@dataclass
class PlanSolution:
    """Gaussian over action sequences: mean and std, each (horizon, action_dim_max)."""

    mean: np.ndarray
    std: np.ndarray


def uncertainty_penalty(q_values, coef):
    """coef * mean(Q) * std(Q) across the ensemble axis (population std)."""
    return coef * q_values.mean(axis=0) * q_values.std(axis=0)


def score_trajectories(model, z0, actions, task_id=None, config=None, discount=None):
    """Score (P, H, A) action sequences from a shared start latent z0.

    Sum of discounted decoded rewards plus discounted terminal value, where the
    terminal action is the deterministic policy output and the value is the
    ensemble mean. With uncertainty_coef > 0, an undiscounted mean*std penalty
    is subtracted at every rollout step and at the terminal state.
    """
    config = config or PlannerConfig()
    actions = np.asarray(actions)
    if actions.ndim != 3 or actions.shape[1] != config.horizon:
        raise ValueError(f"expected actions (population, {config.horizon}, act), got {actions.shape}")
    P, H, A = actions.shape
    if discount is None:
        discount = model.task_discounts(task_id if model.multitask else None)
        discount = float(discount)
    with nn.no_grad():
        z = np.broadcast_to(np.asarray(z0), (P,) + np.shape(z0)[-1:]).copy()
        zs = []
        for h in range(H):
            zs.append(z)
            z = model.next(z, actions[:, h], _ids(task_id, P, model)).data
        z_all = np.concatenate(zs, axis=0)                       # (H*P, latent)
        a_all = actions.transpose(1, 0, 2).reshape(H * P, A)
        ids_all = _ids(task_id, H * P, model)
        r = two_hot_decode(model.reward_logits(z_all, a_all, ids_all).data, model.bins)
        r = r.reshape(H, P)

        ids_P = _ids(task_id, P, model)
        a_term, _, _ = model.sample_policy(z, ids_P, deterministic=True)
        q_logits = model.q_logits(z, a_term.data, ids_P).data    # (N, P, bins)
        q = two_hot_decode(q_logits, model.bins)
        value = q.mean(axis=0)

        g = discount ** np.arange(H)
        score = g @ r + (discount ** H) * value
        if config.uncertainty_coef > 0.0:
            q_roll = two_hot_decode(model.q_logits(z_all, a_all, ids_all).data, model.bins)
            pen = uncertainty_penalty(q_roll, config.uncertainty_coef).reshape(H, P)
            score = score - pen.sum(axis=0) - uncertainty_penalty(q, config.uncertainty_coef)
    return score


def _ids(task_id, n, model):
    if not model.multitask:
        return None
    return np.full(n, int(task_id), dtype=np.int64)


def mppi_update(mean, std, actions, scores, config):
    """Refit the sequence Gaussian to the exponentially weighted elite set.

    Weights are exp((score - best_elite) / temperature); std is clipped to
    [min_std, max_std]. Rejects non-finite scores outright.
    """
    scores = np.asarray(scores)
    if not np.all(np.isfinite(scores)):
        bad = int(np.sum(~np.isfinite(scores)))
        raise PlanningError(f"{bad} of {scores.size} trajectory scores are non-finite")
    k = config.num_elites
    idx = np.argpartition(scores, -k)[-k:]
    elite_scores = scores[idx]
    elite_actions = np.asarray(actions)[idx]
    w = np.exp((elite_scores - elite_scores.max()) / config.temperature)
    w_sum = w.sum()
    new_mean = np.einsum("p,pha->ha", w, elite_actions) / w_sum
    dev = elite_actions - new_mean
    var = np.einsum("p,pha->ha", w, dev * dev) / w_sum
    new_std = np.clip(np.sqrt(var), config.min_std, config.max_std)
    out_dtype = np.asarray(mean).dtype
    return new_mean.astype(out_dtype), new_std.astype(out_dtype)


def plan(model, z0, previous, task_id=None, rng=None, config=None,
         evaluation=False, trace=None):
    """One decision step: optimize a sequence Gaussian and pick the first action.

    previous is the last step's PlanSolution or None; its mean (shifted by one
    step) warm-starts the new mean while std restarts at max_std. Returns
    (action, PlanSolution). In evaluation mode the action is the final mean's
    first step; otherwise it is sampled from the final Gaussian. Masked action
    dims are exactly zero either way. trace, if a list, collects the best raw
    score per iteration.
    """
    config = (config or PlannerConfig()).validate()
    H = config.horizon
    A = model.config.action_dim_max
    dtype = model.dtype
    mask = model.action_mask(task_id if model.multitask else None)
    valid_dims = int(mask.sum())
    iterations = config.iterations
    if valid_dims >= config.iterations_bonus_min_dim:
        iterations += config.iterations_bonus

    mean = np.zeros((H, A), dtype)
    if previous is not None:
        mean[:-1] = previous.mean[1:]
    std = np.full((H, A), config.max_std, dtype)
    discount = float(model.task_discounts(int(task_id) if model.multitask else None))

    n_prior = config.policy_prior_samples
    n_gauss = config.population - n_prior
    ids_prior = _ids(task_id, n_prior, model)
    z0 = np.asarray(z0, dtype)

    for it in range(iterations):
        parts = []
        if n_prior > 0:
            with nn.no_grad():
                zp = np.broadcast_to(z0, (n_prior, z0.shape[-1])).copy()
                prior = np.empty((n_prior, H, A), dtype)
                for h in range(H):
                    a, _, _ = model.sample_policy(zp, ids_prior, rng=rng)
                    prior[:, h] = a.data
                    zp = model.next(zp, a.data, ids_prior).data
            parts.append(prior)
        if n_gauss > 0:
            eps = rng.standard_normal((n_gauss, H, A), dtype=dtype)
            samples = np.clip(mean + std * eps, -1.0, 1.0) * mask
            parts.append(samples)
        candidates = np.concatenate(parts, axis=0)
        scores = score_trajectories(model, z0, candidates, task_id=task_id,
                                    config=config, discount=discount)
        if not np.all(np.isfinite(scores)):
            raise PlanningError(f"non-finite trajectory score at iteration {it} "
                                f"(population {candidates.shape[0]}, horizon {H})")
        if trace is not None:
            trace.append(float(scores.max()))
        mean, std = mppi_update(mean, std, candidates, scores, config)
        mean = mean * mask
        std = np.where(mask > 0, std, config.min_std).astype(dtype)

    if evaluation:
        action = mean[0].copy()
    else:
        noise = rng.standard_normal(A, dtype=dtype)
        action = np.clip(mean[0] + std[0] * noise, -1.0, 1.0)
    action = (action * mask).astype(dtype)
    return action, PlanSolution(mean=mean, std=std)
