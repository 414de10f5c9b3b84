"""Training loops: online single-task RL, offline multi-task regression over a
fixed dataset, finetuning from a pretrained multi-task model, and evaluation.

Online schedule: seed_steps of uniform random actions, then strict lockstep of
one environment step (planner in exploration mode), one model update, and one
policy update — so cumulative updates always equal env steps minus seed steps.
Metrics are written one row per episode; a run aborts with diagnostics the
moment any loss or gradient norm goes non-finite.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .buffer import Episode, ReplayBuffer, TaskRecord, load_dataset
from .envs import discount_heuristic, make_env
from .losses import ValueScale, model_loss, policy_loss
from .model import ModelConfig, ModelTask, WorldModel
from .planner import plan

__all__ = [
    "TrainConfig", "TrainingError", "MetricsWriter", "seed_steps_heuristic",
    "discount_heuristic", "evaluate", "OnlineTrainer", "train_offline_multitask",
]

METRIC_FIELDS = ("step", "episode", "return", "success", "loss_consistency",
                 "loss_reward", "loss_value", "loss_policy", "grad_norm", "pi_entropy")


class TrainingError(RuntimeError):
    """Unrecoverable training failure (non-finite loss or gradient)."""


def seed_steps_heuristic(effective_length):
    """max(5*T, 1000) environment steps before the first gradient update."""
    if effective_length < 1:
        raise ValueError("episode length must be positive")
    return max(5 * int(effective_length), 1000)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 50_000
    seed_steps: int = 0                # 0 = derive from episode length
    batch_size: int = 256
    multitask_batch_size: int = 1024
    utd_ratio: int = 1
    lr: float = 3e-4
    encoder_lr: float = 1e-4
    grad_clip_norm: float = 20.0
    q_ema_momentum: float = 0.99
    scale_momentum: float = 0.99
    scale_low: float = 5.0
    scale_high: float = 95.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_episodes: int = 10
    eval_interval: int = 0             # env steps between mid-run evals; 0 = off
    checkpoint_interval: int = 0       # env steps between checkpoints; 0 = final only
    offline_updates: int = 30_000

    def validate(self):
        if self.total_steps < 1 or self.batch_size < 1 or self.utd_ratio < 1:
            raise ValueError("total_steps, batch_size, utd_ratio must be positive")
        if not 0.0 <= self.q_ema_momentum <= 1.0:
            raise ValueError("q_ema_momentum must be in [0, 1]")
        return self


class MetricsWriter:
    """Newline-delimited records with a fixed field order; floats at 6
    significant digits, absent values as null. Also echoes key=value lines."""

    def __init__(self, path, echo=True):
        self.path = path
        self.echo = echo
        self._file = open(path, "w", buffering=1)

    def write(self, **values):
        unknown = set(values) - set(METRIC_FIELDS)
        if unknown:
            raise ValueError(f"unknown metric fields {sorted(unknown)}")
        parts = []
        shown = []
        for f in METRIC_FIELDS:
            v = values.get(f)
            if v is None:
                parts.append(f'"{f}": null')
                continue
            if isinstance(v, (bool, np.bool_)):
                v = int(v)
            if isinstance(v, (int, np.integer)):
                parts.append(f'"{f}": {int(v)}')
                shown.append(f"{f}={int(v)}")
            else:
                s = format(float(v), ".6g")
                parts.append(f'"{f}": {s}')
                shown.append(f"{f}={s}")
        self._file.write("{" + ", ".join(parts) + "}\n")
        if self.echo:
            print(" ".join(shown), flush=True)

    def close(self):
        self._file.close()


def _pad(vec, width):
    if len(vec) == width:
        return np.asarray(vec, np.float32)
    out = np.zeros(width, np.float32)
    out[: len(vec)] = vec
    return out


def evaluate(model, env, episodes, rng, planner_config, task_id=None):
    """Run the planner in evaluation mode (mean action executed). Returns
    {"mean_return", "success_rate", "returns"}; success_rate is None for
    return-metric tasks. Does not touch any buffer or model state."""
    spec = env.spec()
    returns, successes = [], []
    for _ in range(episodes):
        obs = env.reset(int(rng.integers(2**31)))
        solution = None
        ep_obs, ep_act, ep_rew = [obs], [], []
        done = False
        while not done:
            with nn.no_grad():
                z0 = model.encode(_pad(obs, model.config.obs_dim_max)[None],
                                  None if not model.multitask else np.array([task_id]))
            action, solution = plan(model, z0.data[0], solution, task_id=task_id,
                                    rng=rng, config=planner_config, evaluation=True)
            obs, reward, done = env.step(action[: spec.act_dim])
            ep_obs.append(obs)
            ep_act.append(action[: spec.act_dim])
            ep_rew.append(reward)
        episode = Episode(np.array(ep_obs), np.array(ep_act), np.array(ep_rew))
        returns.append(episode.total_reward)
        if spec.metric == "success":
            successes.append(env.is_success(episode))
    return {
        "mean_return": float(np.mean(returns)),
        "success_rate": float(np.mean(successes)) if successes else None,
        "returns": returns,
    }


class _Windows:
    """Running means (and a max for grad norms) between metrics rows."""

    def __init__(self):
        self.sums = {}
        self.counts = {}
        self.grad_max = None

    def push(self, stats, grad_norm):
        for k, v in stats.items():
            self.sums[k] = self.sums.get(k, 0.0) + v
            self.counts[k] = self.counts.get(k, 0) + 1
        self.grad_max = grad_norm if self.grad_max is None else max(self.grad_max, grad_norm)

    def mean(self, key):
        if self.counts.get(key):
            return self.sums[key] / self.counts[key]
        return None

    def reset(self):
        self.sums.clear()
        self.counts.clear()
        self.grad_max = None


class OnlineTrainer:
    """Single-task online loop; also used for finetuning a multi-task model on
    one new task (fixed_task_id selects the embedding row, batches are padded)."""

    def __init__(self, model, env, planner_config, train_config, out_dir,
                 seed=0, fixed_task_id=None, metrics_name="metrics.jsonl",
                 buffer_capacity=1_000_000):
        self.model = model
        self.env = env
        self.planner_config = planner_config
        self.config = train_config.validate()
        self.out_dir = out_dir
        self.fixed_task_id = fixed_task_id
        self.seed = seed
        spec = env.spec()
        self.buffer = ReplayBuffer(buffer_capacity, model.config.horizon,
                                   model.config.obs_dim_max, model.config.action_dim_max)
        os.makedirs(out_dir, exist_ok=True)
        self.metrics = MetricsWriter(os.path.join(out_dir, metrics_name))
        self.value_scale = ValueScale(train_config.scale_momentum,
                                      train_config.scale_low, train_config.scale_high)
        self.seed_steps = train_config.seed_steps or seed_steps_heuristic(spec.effective_length)

        ss = np.random.SeedSequence(seed)
        env_ss, plan_ss, update_ss, seedact_ss = ss.spawn(4)
        self.env_rng = np.random.default_rng(env_ss)
        self.plan_rng = np.random.default_rng(plan_ss)
        self.update_rng = np.random.default_rng(update_ss)
        self.seedact_rng = np.random.default_rng(seedact_ss)

        groups = model.parameter_groups()
        adam_kw = dict(beta1=train_config.adam_beta1, beta2=train_config.adam_beta2,
                       eps=train_config.adam_eps)
        model_groups = [(groups["encoder"], train_config.encoder_lr)]
        other = [p for name, g in groups.items()
                 for p in g if name not in ("encoder", "policy")]
        model_groups.append((other, train_config.lr))
        self.model_opt = nn.Adam(model_groups, **adam_kw)
        self.policy_opt = nn.Adam([(groups["policy"], train_config.lr)], **adam_kw)
        self.updates_done = 0

    def _batch_task_ids(self, batch):
        if self.model.multitask:
            batch["task_ids"] = np.full(batch["rewards"].shape[1],
                                        self.fixed_task_id, np.int64)
        else:
            batch["task_ids"] = None
        return batch

    def update(self):
        """One model step + one policy step on a fresh batch; EMA + projection."""
        cfg = self.config
        batch = self._batch_task_ids(
            self.buffer.sample_segments(cfg.batch_size, self.update_rng))
        model = self.model
        model.zero_grad()
        loss, stats, latents = model_loss(model, batch, self.update_rng)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite model loss at update {self.updates_done}: {stats}")
        loss.backward()
        gn_model = nn.clip_grad_norm(model.model_parameters(), cfg.grad_clip_norm)
        if not np.isfinite(gn_model):
            raise TrainingError(f"non-finite model gradient at update {self.updates_done}")
        self.model_opt.step()

        for p in model.policy_parameters():
            p.grad = None
        ploss, pstats = policy_loss(model, latents, batch["task_ids"],
                                    self.update_rng, self.value_scale)
        if not np.isfinite(ploss.data):
            raise TrainingError(f"non-finite policy loss at update {self.updates_done}")
        ploss.backward()
        gn_pi = nn.clip_grad_norm(model.policy_parameters(), cfg.grad_clip_norm)
        if not np.isfinite(gn_pi):
            raise TrainingError(f"non-finite policy gradient at update {self.updates_done}")
        self.policy_opt.step()

        model.ema_update_target(cfg.q_ema_momentum)
        model.project_task_embeddings()
        self.updates_done += 1
        stats.update(pstats)
        return stats, max(min(gn_model, cfg.grad_clip_norm), min(gn_pi, cfg.grad_clip_norm))

    def _act(self, obs, step, solution):
        spec = self.env.spec()
        if step <= self.seed_steps:
            action = self.seedact_rng.uniform(-1.0, 1.0, spec.act_dim).astype(np.float32)
            return action, None
        with nn.no_grad():
            ids = np.array([self.fixed_task_id]) if self.model.multitask else None
            z0 = self.model.encode(_pad(obs, self.model.config.obs_dim_max)[None], ids).data[0]
        full, solution = plan(self.model, z0, solution, task_id=self.fixed_task_id,
                              rng=self.plan_rng, config=self.planner_config)
        return full[: spec.act_dim], solution

    def run(self):
        cfg = self.config
        env = self.env
        spec = env.spec()
        task_id = self.fixed_task_id or 0
        window = _Windows()
        obs = env.reset(int(self.env_rng.integers(2**31)))
        ep_obs, ep_act, ep_rew = [obs], [], []
        solution = None
        episode_idx = 0
        for step in range(1, cfg.total_steps + 1):
            action, solution = self._act(obs, step, solution)
            obs, reward, done = env.step(action)
            ep_obs.append(obs)
            ep_act.append(action)
            ep_rew.append(reward)
            if step > self.seed_steps:
                for _ in range(cfg.utd_ratio):
                    stats, grad_norm = self.update()
                    window.push(stats, grad_norm)
            if done:
                episode = Episode(np.array(ep_obs), np.array(ep_act),
                                  np.array(ep_rew), task_id=task_id)
                self.buffer.add_episode(episode)
                success = None
                if spec.metric == "success":
                    success = env.is_success(episode)
                self.metrics.write(
                    step=step, episode=episode_idx, **{"return": episode.total_reward},
                    success=success,
                    loss_consistency=window.mean("loss_consistency"),
                    loss_reward=window.mean("loss_reward"),
                    loss_value=window.mean("loss_value"),
                    loss_policy=window.mean("loss_policy"),
                    grad_norm=window.grad_max,
                    pi_entropy=window.mean("pi_entropy"))
                window.reset()
                episode_idx += 1
                obs = env.reset()
                ep_obs, ep_act, ep_rew = [obs], [], []
                solution = None
            if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                self.model.save(os.path.join(self.out_dir, f"step_{step}.ckpt"))
            if cfg.eval_interval and step % cfg.eval_interval == 0:
                result = evaluate(self.model, make_env(spec.name, 0), cfg.eval_episodes,
                                  np.random.default_rng([self.seed, step]),
                                  self.planner_config, task_id=self.fixed_task_id)
                print(f"eval step={step} mean_return={result['mean_return']:.6g}"
                      + (f" success_rate={result['success_rate']:.6g}"
                         if result["success_rate"] is not None else ""), flush=True)
        self.model.save(os.path.join(self.out_dir, f"step_{cfg.total_steps}.ckpt"))
        self.metrics.close()
        return self.model


def finetune(model, task_name, source_task, planner_config, train_config,
             out_dir, seed=0):
    """Append a task embedding row (copied from source_task, or random unit) and
    train online on the new task with an empty buffer and unchanged settings."""
    env = make_env(task_name, seed)
    spec = env.spec()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    task = ModelTask(task_name, spec.obs_dim, spec.act_dim,
                     discount_heuristic(spec.effective_length))
    new_id = model.append_task(task, rng, source_task=source_task)
    trainer = OnlineTrainer(model, env, planner_config, train_config, out_dir,
                            seed=seed, fixed_task_id=new_id)
    trainer.run()
    return model, new_id


def train_offline_multitask(dataset_path, model_config, planner_config,
                            train_config, out_dir, seed=0, model=None):
    """Supervised training over a fixed multi-task dataset: no env interaction,
    mixed-task batches, per-task discounts, embeddings projected to norm <= 1.
    The masked-dim gradient check runs every update."""
    tasks, episodes = load_dataset(dataset_path)
    if len(tasks) < 2:
        raise ValueError(f"offline training expects >= 2 tasks, dataset has {len(tasks)}")
    obs_max = max(t.obs_dim for t in tasks)
    act_max = max(t.act_dim for t in tasks)
    if model is None:
        mc = model_config
        if mc.obs_dim_max == 0:
            mc = replace(mc, obs_dim_max=obs_max, action_dim_max=act_max,
                         num_tasks=len(tasks))
        if obs_max > mc.obs_dim_max or act_max > mc.action_dim_max:
            raise ValueError(f"dataset dims ({obs_max}, {act_max}) exceed model maxima "
                             f"({mc.obs_dim_max}, {mc.action_dim_max})")
        if mc.num_tasks != len(tasks):
            raise ValueError(f"model num_tasks {mc.num_tasks} != dataset tasks {len(tasks)}")
        model_tasks = [ModelTask(t.name, t.obs_dim, t.act_dim,
                                 discount_heuristic(t.episode_length)) for t in tasks]
        rng_init = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        model = WorldModel(mc, rng_init, tasks=model_tasks)

    total = sum(len(ep) for ep in episodes)
    buffer = ReplayBuffer(total, model.config.horizon,
                          model.config.obs_dim_max, model.config.action_dim_max)
    for ep in episodes:
        buffer.add_episode(ep)

    cfg = train_config.validate()
    os.makedirs(out_dir, exist_ok=True)
    metrics = MetricsWriter(os.path.join(out_dir, "metrics.jsonl"))
    value_scale = ValueScale(cfg.scale_momentum, cfg.scale_low, cfg.scale_high)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])

    groups = model.parameter_groups()
    adam_kw = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    other = [p for name, g in groups.items()
             for p in g if name not in ("encoder", "policy")]
    model_opt = nn.Adam([(groups["encoder"], cfg.encoder_lr), (other, cfg.lr)], **adam_kw)
    policy_opt = nn.Adam([(groups["policy"], cfg.lr)], **adam_kw)

    window = _Windows()
    report_every = max(1, cfg.offline_updates // 50)
    for update in range(1, cfg.offline_updates + 1):
        batch = buffer.sample_segments(cfg.multitask_batch_size, rng)
        model.zero_grad()
        loss, stats, latents = model_loss(model, batch, rng)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite model loss at update {update}")
        loss.backward()
        gn_model = nn.clip_grad_norm(model.model_parameters(), cfg.grad_clip_norm)
        model_opt.step()

        for p in model.policy_parameters():
            p.grad = None
        ploss, pstats, aux = policy_loss(model, latents, batch["task_ids"], rng,
                                         value_scale, return_aux=True)
        ploss.backward()
        _assert_masked_grads(model, batch["task_ids"], aux)
        gn_pi = nn.clip_grad_norm(model.policy_parameters(), cfg.grad_clip_norm)
        policy_opt.step()
        model.ema_update_target(cfg.q_ema_momentum)
        model.project_task_embeddings()
        stats.update(pstats)
        window.push(stats, max(min(gn_model, cfg.grad_clip_norm),
                               min(gn_pi, cfg.grad_clip_norm)))
        if update % report_every == 0 or update == cfg.offline_updates:
            metrics.write(step=update, episode=update // report_every,
                          loss_consistency=window.mean("loss_consistency"),
                          loss_reward=window.mean("loss_reward"),
                          loss_value=window.mean("loss_value"),
                          loss_policy=window.mean("loss_policy"),
                          grad_norm=window.grad_max,
                          pi_entropy=window.mean("pi_entropy"))
            window.reset()
    model.save(os.path.join(out_dir, f"step_{cfg.offline_updates}.ckpt"))
    metrics.close()
    return model


def _assert_masked_grads(model, task_ids, aux):
    """Padded action dims must receive exactly zero gradient."""
    steps = aux["steps"]
    ids = np.tile(task_ids, steps) if task_ids is not None else None
    mask = model.action_mask(ids, (aux["mean"].data.shape[0],))
    for name in ("mean", "log_std"):
        g = aux[name].grad
        if g is None:
            continue
        bad = np.abs(g * (1.0 - mask))
        if bad.max() > 0.0:
            raise AssertionError(f"masked action dims received {name} gradient "
                                 f"(max {bad.max():.3e})")
