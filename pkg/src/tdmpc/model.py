"""The learned components: observation encoder, latent dynamics, reward head,
Q ensemble with EMA targets, stochastic policy prior, and the task-embedding
table for multi-task conditioning.

Shape conventions: observations arrive zero-padded to obs_dim_max, actions to
action_dim_max; task_ids is None in single-task mode (the embedding is omitted
entirely and input widths shrink accordingly); all batched inputs put features
on the last axis.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields, replace

import numpy as np

from . import nn
from .nn import Tensor
from .regression import BinSpec, two_hot_decode

# entropy of a unit Gaussian: 0.5 * ln(2*pi*e)
_HALF_LN_2PIE = 0.5 * float(np.log(2.0 * np.pi * np.e))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and objective constants; defaults follow the reference table."""

    obs_dim_max: int = 0          # 0 = fill from the task at build time
    action_dim_max: int = 0
    latent_dim: int = 512
    encoder_dim: int = 256
    mlp_dim: int = 512
    num_q: int = 5
    num_bins: int = 101
    bin_vmin: float = -10.0
    bin_vmax: float = 10.0
    simnorm_v: int = 8
    simnorm_tau: float = 1.0
    task_embedding_dim: int = 96
    num_tasks: int = 0            # 0 = single-task mode (no embedding)
    horizon: int = 3
    temporal_coef: float = 0.5
    consistency_coef: float = 20.0
    reward_coef: float = 0.1
    value_coef: float = 0.1
    entropy_coef: float = 1e-4
    q_dropout: float = 0.01
    log_std_min: float = -10.0
    log_std_max: float = 2.0

    def validate(self):
        if self.obs_dim_max < 1 or self.action_dim_max < 1:
            raise ValueError("obs_dim_max and action_dim_max must be set before building")
        if self.latent_dim % self.simnorm_v != 0:
            raise ValueError(f"latent_dim {self.latent_dim} not divisible by simnorm_v {self.simnorm_v}")
        if self.num_q < 2:
            raise ValueError("need an ensemble of at least 2 Q heads")
        if self.num_bins % 2 != 1:
            raise ValueError("num_bins must be odd")
        if not 0.0 < self.temporal_coef <= 1.0:
            raise ValueError("temporal_coef must be in (0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.num_tasks < 0:
            raise ValueError("num_tasks must be nonnegative")
        if self.num_tasks > 0 and self.task_embedding_dim < 1:
            raise ValueError("multi-task mode needs a positive task_embedding_dim")
        if not self.log_std_min < self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")
        return self


@dataclass
class ModelTask:
    """Per-task metadata the model needs: true dims, discount, display name."""

    name: str
    obs_dim: int
    act_dim: int
    discount: float


class WorldModel(nn.Module):
    def __init__(self, config: ModelConfig, rng, tasks=None, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.bins = BinSpec(config.num_bins, config.bin_vmin, config.bin_vmax)
        self._centers = self.bins.centers.astype(self.dtype)

        if tasks is None:
            tasks = [ModelTask("task", config.obs_dim_max, config.action_dim_max, 0.99)]
        self.tasks = list(tasks)
        n_rows = max(1, config.num_tasks)
        if len(self.tasks) != n_rows:
            raise ValueError(f"expected {n_rows} task entries, got {len(self.tasks)}")
        for t in self.tasks:
            if t.obs_dim > config.obs_dim_max or t.act_dim > config.action_dim_max:
                raise ValueError(f"task {t.name!r} dims exceed model maxima")

        emb = config.task_embedding_dim if config.num_tasks > 0 else 0
        self._emb_dim = emb
        obs_in = config.obs_dim_max + emb
        dyn_in = config.latent_dim + emb + config.action_dim_max
        pol_in = config.latent_dim + emb
        L, M, E, B = config.latent_dim, config.mlp_dim, config.encoder_dim, config.num_bins
        N = config.num_q
        sv, st = config.simnorm_v, config.simnorm_tau

        def normed(i, o, act, dropout=0.0):
            return nn.NormedLinear(i, o, rng, act=act, dtype=dtype, dropout=dropout,
                                   simnorm_v=sv, simnorm_tau=st)

        self.encoder = [normed(obs_in, E, "mish"), normed(E, L, "simnorm")]
        self.dynamics = [normed(dyn_in, M, "mish"), normed(M, M, "mish"), normed(M, L, "simnorm")]
        self.reward = [normed(dyn_in, M, "mish"), normed(M, M, "mish"),
                       nn.Linear(M, B, rng, dtype=dtype, zero_init=True)]
        self.policy = [normed(pol_in, M, "mish"), normed(M, M, "mish"),
                       nn.Linear(M, 2 * config.action_dim_max, rng, dtype=dtype)]
        self.q = [nn.EnsembleNormedLinear(N, dyn_in, M, rng, act="mish", dtype=dtype,
                                          dropout=config.q_dropout),
                  nn.EnsembleNormedLinear(N, M, M, rng, act="mish", dtype=dtype),
                  nn.EnsembleLinear(N, M, B, rng, dtype=dtype, zero_init=True)]
        # EMA copies of the Q ensemble; updated by the trainer, never by backprop
        self.q_target = [nn.EnsembleNormedLinear(N, dyn_in, M, rng, act="mish", dtype=dtype),
                         nn.EnsembleNormedLinear(N, M, M, rng, dtype=dtype),
                         nn.EnsembleLinear(N, M, B, rng, dtype=dtype)]
        self.copy_q_to_target()

        for group, name in ((self.encoder, "encoder"), (self.dynamics, "dynamics"),
                            (self.reward, "reward"), (self.policy, "policy"),
                            (self.q, "q"), (self.q_target, "q_target")):
            for i, layer in enumerate(group):
                self.register(f"{name}.{i}", layer)

        if emb > 0:
            rows = rng.standard_normal((config.num_tasks, emb))
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)
            self.task_emb = self.register("task_emb", Tensor(rows.astype(dtype), requires_grad=True))
        else:
            self.task_emb = None

    # ------------------------------------------------------------ bookkeeping

    @property
    def multitask(self):
        return self._emb_dim > 0

    def parameter_groups(self):
        groups: dict[str, list[Tensor]] = {}
        for name, p in self.named_parameters():
            groups.setdefault(name.split(".")[0], []).append(p)
        groups.pop("q_target")
        return groups

    def model_parameters(self):
        """Everything trained by the model objective (policy excluded)."""
        out = []
        for name, group in self.parameter_groups().items():
            if name != "policy":
                out.extend(group)
        return out

    def policy_parameters(self):
        return self.parameter_groups()["policy"]

    def copy_q_to_target(self):
        for src, dst in zip(self.q, self.q_target):
            for (_, ps), (_, pd) in zip(src.named_parameters(), dst.named_parameters()):
                pd.data[...] = ps.data
                pd.requires_grad = False

    def ema_update_target(self, momentum):
        online = [p for layer in self.q for _, p in layer.named_parameters()]
        target = [p for layer in self.q_target for _, p in layer.named_parameters()]
        nn.ema_update(target, online, momentum)

    def project_task_embeddings(self):
        """Rescale any embedding row whose L2 norm exceeds 1 back onto the unit ball."""
        if self.task_emb is None:
            return
        rows = self.task_emb.data
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        np.divide(rows, norms, out=rows, where=norms > 1.0)

    def checksum(self):
        return float(sum(np.abs(p.data).sum() for p in self.parameters()))

    # ------------------------------------------------------------ task plumbing

    def _check_task_ids(self, task_ids):
        if not self.multitask:
            if task_ids is not None and np.any(np.asarray(task_ids) != 0):
                raise ValueError("single-task model accepts only task 0 / None")
            return None
        if task_ids is None:
            raise ValueError("multi-task model requires task_ids")
        ids = np.asarray(task_ids)
        if ids.min() < 0 or ids.max() >= self.config.num_tasks:
            raise ValueError(f"unknown task id in {np.unique(ids)}")
        return ids

    def _with_task(self, x, task_ids):
        if not self.multitask:
            return x
        e = nn.embedding(self.task_emb, task_ids)
        return nn.concat([x, e], axis=-1)

    def action_mask(self, task_ids, batch_shape=()):
        """1.0 on valid action dims, 0.0 on padding. Shape (*batch, action_dim_max)."""
        A = self.config.action_dim_max
        if not self.multitask:
            mask = np.zeros(A, self.dtype)
            mask[: self.tasks[0].act_dim] = 1.0
            return np.broadcast_to(mask, batch_shape + (A,)) if batch_shape else mask
        dims = np.array([t.act_dim for t in self.tasks])
        per_task = (np.arange(A)[None, :] < dims[:, None]).astype(self.dtype)
        return per_task[np.asarray(task_ids)]

    def task_discounts(self, task_ids):
        gammas = np.array([t.discount for t in self.tasks])
        if task_ids is None:
            return float(gammas[0])
        return gammas[np.asarray(task_ids)]

    # ------------------------------------------------------------ forward passes

    def _run(self, layers, x, rng=None, training=False):
        for layer in layers:
            if isinstance(layer, (nn.NormedLinear, nn.EnsembleNormedLinear)):
                x = layer(x, rng=rng, training=training)
            else:
                x = layer(x)
        return x

    def encode(self, obs, task_ids=None):
        obs_d = obs.data if isinstance(obs, Tensor) else np.asarray(obs)
        if obs_d.shape[-1] != self.config.obs_dim_max:
            raise ValueError(f"expected padded obs width {self.config.obs_dim_max}, got {obs_d.shape[-1]}")
        task_ids = self._check_task_ids(task_ids)
        return self._run(self.encoder, self._with_task(obs, task_ids))

    def next(self, z, action, task_ids=None):
        a_d = action.data if isinstance(action, Tensor) else np.asarray(action)
        if a_d.shape[-1] != self.config.action_dim_max:
            raise ValueError(f"expected padded action width {self.config.action_dim_max}, got {a_d.shape[-1]}")
        task_ids = self._check_task_ids(task_ids)
        x = nn.concat([z, action], axis=-1)
        return self._run(self.dynamics, self._with_task(x, task_ids))

    def reward_logits(self, z, action, task_ids=None):
        task_ids = self._check_task_ids(task_ids)
        x = nn.concat([z, action], axis=-1)
        return self._run(self.reward, self._with_task(x, task_ids))

    def q_logits(self, z, action, task_ids=None, target=False, training=False, rng=None):
        """All heads at once: (num_q, batch, num_bins)."""
        task_ids = self._check_task_ids(task_ids)
        x = nn.concat([z, action], axis=-1)
        layers = self.q_target if target else self.q
        return self._run(layers, self._with_task(x, task_ids), rng=rng, training=training)

    def decode_values(self, logits):
        """Differentiable two-hot decode of (..., num_bins) logits."""
        return nn.symexp_t(nn.bin_expectation(logits, self._centers))

    def policy_stats(self, z, task_ids=None):
        task_ids = self._check_task_ids(task_ids)
        out = self._run(self.policy, self._with_task(z, task_ids))
        A = self.config.action_dim_max
        mean = nn.slice_last(out, 0, A)
        log_std = nn.clamp(nn.slice_last(out, A, 2 * A),
                           self.config.log_std_min, self.config.log_std_max)
        return mean, log_std

    def sample_policy(self, z, task_ids=None, rng=None, deterministic=False,
                      return_mean=False):
        """Tanh-squashed Gaussian action in [-1, 1], masked dims exactly 0.

        Returns (action, log_std, entropy); entropy is the closed-form diagonal
        Gaussian entropy summed over valid action dims only. With return_mean,
        the pre-squash mean node is appended (for gradient instrumentation).
        """
        mean, log_std = self.policy_stats(z, task_ids)
        batch_shape = mean.data.shape[:-1]
        mask = self.action_mask(task_ids if self.multitask else None, batch_shape)
        if deterministic:
            u = mean
        else:
            eps = rng.standard_normal(mean.data.shape, dtype=self.dtype)
            u = mean + nn.texp(log_std) * eps
        action = nn.tanh(u) * mask
        entropy = nn.tsum((log_std + _HALF_LN_2PIE) * mask, axis=-1)
        if return_mean:
            return action, log_std, entropy, mean
        return action, log_std, entropy

    # ------------------------------------------------------------ TD targets

    def td_target(self, reward, z_next, task_ids=None, rng=None):
        """r + gamma * min of two distinct randomly chosen EMA heads at (z', p(z'))."""
        N = self.config.num_q
        if N < 2:
            raise ValueError("TD target needs an ensemble of at least 2 heads")
        reward = np.asarray(reward)
        with nn.no_grad():
            action, _, _ = self.sample_policy(z_next, task_ids, rng=rng)
            logits = self.q_logits(z_next, action, task_ids, target=True).data
        values = two_hot_decode(logits, self.bins)  # (N, B)
        B = values.shape[-1]
        i = rng.integers(N, size=B)
        j = (i + 1 + rng.integers(N - 1, size=B)) % N  # distinct from i, uniform
        pair_min = np.minimum(values[i, np.arange(B)], values[j, np.arange(B)])
        gamma = self.task_discounts(task_ids)
        return reward + gamma * pair_min

    # ------------------------------------------------------------ persistence

    def config_header(self):
        buf = io.StringIO()
        buf.write("format = worldmodel-checkpoint\n")
        for f in fields(self.config):
            buf.write(f"model.{f.name} = {getattr(self.config, f.name)!r}\n")
        buf.write(f"dtype = {self.dtype.name}\n")
        buf.write(f"tasks.count = {len(self.tasks)}\n")
        for i, t in enumerate(self.tasks):
            buf.write(f"task.{i}.name = {t.name}\n")
            buf.write(f"task.{i}.obs_dim = {t.obs_dim}\n")
            buf.write(f"task.{i}.act_dim = {t.act_dim}\n")
            buf.write(f"task.{i}.discount = {t.discount!r}\n")
        return buf.getvalue()

    def save(self, path):
        arrays = {name: p.data for name, p in self.named_parameters()}
        nn.save_tensors(path, arrays, header=self.config_header())

    @staticmethod
    def parse_header(header):
        kv = {}
        for line in header.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        if kv.get("format") != "worldmodel-checkpoint":
            raise nn.ContainerError("container is not a model checkpoint")
        ckw = {}
        for f in fields(ModelConfig):
            raw = kv[f"model.{f.name}"]
            ckw[f.name] = int(raw) if isinstance(f.default, int) else float(raw)
        config = ModelConfig(**ckw)
        tasks = []
        for i in range(int(kv["tasks.count"])):
            tasks.append(ModelTask(kv[f"task.{i}.name"], int(kv[f"task.{i}.obs_dim"]),
                                   int(kv[f"task.{i}.act_dim"]), float(kv[f"task.{i}.discount"])))
        return config, tasks, np.dtype(kv.get("dtype", "float32"))

    @classmethod
    def load(cls, path):
        arrays, header = nn.load_tensors(path)
        config, tasks, dtype = cls.parse_header(header)
        model = cls(config, np.random.default_rng(0), tasks=tasks, dtype=dtype)
        model.assign_parameters(arrays)
        return model

    def assign_parameters(self, arrays):
        """Load a parameter dict; every name and shape must match exactly."""
        own = dict(self.named_parameters())
        if set(own) != set(arrays):
            missing = set(own) ^ set(arrays)
            raise nn.ContainerError(f"parameter name mismatch: {sorted(missing)[:4]}")
        for name, p in own.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise nn.ContainerError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr.astype(p.data.dtype)

    # ------------------------------------------------------------ finetune support

    def append_task(self, task: ModelTask, rng, source_task=None):
        """Grow the embedding table by one row (copy of source, or random unit vector).

        Returns the new task id. Existing rows are preserved bit-for-bit.
        """
        if not self.multitask:
            raise ValueError("append_task requires a multi-task model")
        if task.obs_dim > self.config.obs_dim_max or task.act_dim > self.config.action_dim_max:
            raise ValueError(f"task {task.name!r} dims exceed model maxima")
        if source_task is not None:
            names = [t.name for t in self.tasks]
            if source_task not in names:
                raise ValueError(f"unknown source task {source_task!r} (have {names})")
            row = self.task_emb.data[names.index(source_task)].copy()
        else:
            row = rng.standard_normal(self._emb_dim)
            row = (row / np.linalg.norm(row)).astype(self.dtype)
        new = np.concatenate([self.task_emb.data, row[None].astype(self.dtype)], axis=0)
        self.task_emb = self._params["task_emb"] = Tensor(new, requires_grad=True)
        self.tasks.append(task)
        self.config = replace(self.config, num_tasks=self.config.num_tasks + 1)
        return len(self.tasks) - 1
