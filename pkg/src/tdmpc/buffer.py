"""Episodic replay storage with uniform segment sampling, plus a flat binary
dataset format for moving collected experience between runs.

Episodes are stored at their native dimensionality; sampled batches are
zero-padded up to the configured maxima. A segment of horizon H spans H+1
transitions, so an episode of length L offers starts {0, ..., L-H-1} and every
start across the whole buffer is equally likely.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"TDD2"
DATASET_VERSION = 1


class DatasetError(ValueError):
    """Malformed or truncated dataset file."""


@dataclass
class TaskRecord:
    """Task table entry carried inside dataset files."""

    name: str
    obs_dim: int
    act_dim: int
    episode_length: int
    discount: float


class Episode:
    """One complete trajectory: L transitions, L+1 observations."""

    def __init__(self, obs, actions, rewards, task_id=0):
        self.obs = np.asarray(obs, np.float32)
        self.actions = np.asarray(actions, np.float32)
        self.rewards = np.asarray(rewards, np.float32)
        self.task_id = int(task_id)
        L = len(self.rewards)
        if self.obs.ndim != 2 or self.actions.ndim != 2 or self.rewards.ndim != 1:
            raise ValueError("obs/actions must be 2-D, rewards 1-D")
        if len(self.obs) != L + 1:
            raise ValueError(f"need {L + 1} observations for {L} transitions, got {len(self.obs)}")
        if len(self.actions) != L:
            raise ValueError(f"need {L} actions for {L} transitions, got {len(self.actions)}")
        if not (np.isfinite(self.obs).all() and np.isfinite(self.actions).all()
                and np.isfinite(self.rewards).all()):
            raise ValueError("episode contains non-finite values")

    def __len__(self):
        return len(self.rewards)

    @property
    def total_reward(self):
        return float(self.rewards.sum())


class ReplayBuffer:
    """FIFO episode store; eviction drops whole episodes once the transition
    count would exceed capacity."""

    def __init__(self, capacity, horizon, obs_dim_max, action_dim_max):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.horizon = int(horizon)
        self.obs_dim_max = int(obs_dim_max)
        self.action_dim_max = int(action_dim_max)
        self.episodes: deque[Episode] = deque()
        self.num_transitions = 0

    def __len__(self):
        return self.num_transitions

    @property
    def num_episodes(self):
        return len(self.episodes)

    def add_episode(self, episode: Episode):
        if episode.obs.shape[1] > self.obs_dim_max or episode.actions.shape[1] > self.action_dim_max:
            raise ValueError("episode dims exceed buffer maxima")
        self.episodes.append(episode)
        self.num_transitions += len(episode)
        while self.num_transitions > self.capacity and len(self.episodes) > 1:
            dropped = self.episodes.popleft()
            self.num_transitions -= len(dropped)

    def _segment_counts(self):
        return np.array([max(0, len(ep) - self.horizon) for ep in self.episodes], dtype=np.int64)

    def sample_segments(self, batch_size, rng):
        """Uniform over every valid (episode, start) pair in the buffer.

        Returns obs (H+2, B, obs_max), actions (H+1, B, act_max),
        rewards (H+1, B), task_ids (B,); obs/actions zero-padded.
        """
        counts = self._segment_counts()
        total = int(counts.sum())
        if total == 0:
            raise ValueError("no sampleable segments (episodes shorter than horizon+1?)")
        H = self.horizon
        flat = rng.integers(total, size=batch_size)
        cum = np.cumsum(counts)
        ep_idx = np.searchsorted(cum, flat, side="right")
        start = flat - (cum[ep_idx] - counts[ep_idx])

        B = batch_size
        obs = np.zeros((H + 2, B, self.obs_dim_max), np.float32)
        actions = np.zeros((H + 1, B, self.action_dim_max), np.float32)
        rewards = np.zeros((H + 1, B), np.float32)
        task_ids = np.zeros(B, np.int64)
        eps = list(self.episodes)
        for b in range(B):
            ep = eps[ep_idx[b]]
            t = int(start[b])
            od, ad = ep.obs.shape[1], ep.actions.shape[1]
            obs[:, b, :od] = ep.obs[t:t + H + 2]
            actions[:, b, :ad] = ep.actions[t:t + H + 1]
            rewards[:, b] = ep.rewards[t:t + H + 1]
            task_ids[b] = ep.task_id
        return {"obs": obs, "actions": actions, "rewards": rewards, "task_ids": task_ids}


# ------------------------------------------------------------------ dataset io


def save_dataset(path, tasks, episodes):
    """Write a task table and episode list as little-endian binary."""
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(struct.pack("<I", len(tasks)))
        for t in tasks:
            name = t.name.encode("utf-8")
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(struct.pack("<IIId", t.obs_dim, t.act_dim, t.episode_length, t.discount))
        f.write(struct.pack("<I", len(episodes)))
        for ep in episodes:
            if not 0 <= ep.task_id < len(tasks):
                raise DatasetError(f"episode task id {ep.task_id} outside task table")
            f.write(struct.pack("<II", ep.task_id, len(ep)))
            f.write(np.ascontiguousarray(ep.obs, "<f4").tobytes())
            f.write(np.ascontiguousarray(ep.actions, "<f4").tobytes())
            f.write(np.ascontiguousarray(ep.rewards, "<f4").tobytes())


def load_dataset(path):
    """Read back (tasks, episodes); arrays round-trip bit-exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    view = memoryview(raw)
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise DatasetError(f"truncated dataset: wanted {n} bytes at offset {off}")
        out = view[off:off + n]
        off += n
        return out

    if bytes(take(4)) != DATASET_MAGIC:
        raise DatasetError("bad magic; not a dataset file")
    (version,) = struct.unpack("<I", take(4))
    if version != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    (n_tasks,) = struct.unpack("<I", take(4))
    tasks = []
    for _ in range(n_tasks):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        obs_dim, act_dim, ep_len, discount = struct.unpack("<IIId", take(16 + 4))
        tasks.append(TaskRecord(name, obs_dim, act_dim, ep_len, discount))
    (n_eps,) = struct.unpack("<I", take(4))
    episodes = []
    for _ in range(n_eps):
        task_id, L = struct.unpack("<II", take(8))
        if task_id >= n_tasks:
            raise DatasetError(f"episode references task {task_id} of {n_tasks}")
        t = tasks[task_id]
        obs = np.frombuffer(take((L + 1) * t.obs_dim * 4), "<f4").reshape(L + 1, t.obs_dim)
        actions = np.frombuffer(take(L * t.act_dim * 4), "<f4").reshape(L, t.act_dim)
        rewards = np.frombuffer(take(L * 4), "<f4")
        episodes.append(Episode(obs.copy(), actions.copy(), rewards.copy(), task_id))
    if off != len(raw):
        raise DatasetError(f"{len(raw) - off} trailing bytes after last episode")
    return tasks, episodes
