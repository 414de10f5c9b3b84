"""Training loop accounting, metrics stream format, and artifact layout."""

import json
import os

import numpy as np
import pytest

from tdmpc.buffer import Episode, TaskRecord, save_dataset
from tdmpc.envs import TaskSpec
from tdmpc.model import ModelConfig, ModelTask, WorldModel
from tdmpc.planner import PlannerConfig
from tdmpc.trainer import (METRIC_FIELDS, MetricsWriter, OnlineTrainer,
                           TrainConfig, TrainingError, evaluate,
                           seed_steps_heuristic, train_offline_multitask)

TINY_PLAN = PlannerConfig(horizon=2, iterations=2, population=16,
                          policy_prior_samples=4, num_elites=4)


class FakeEnv:
    """Deterministic ten-step loop task with the env interface the trainer uses."""

    def __init__(self, length=10, metric="return"):
        self._spec = TaskSpec("fake-loop", 3, 1, episode_length=length,
                              action_repeat=1, metric=metric, discount=0.97)
        self._t = None

    def spec(self):
        return self._spec

    def reset(self, seed=None):
        self._t = 0
        return self._obs()

    def _obs(self):
        t = self._t / self._spec.episode_length
        return np.array([np.sin(t), np.cos(t), t], np.float32)

    def step(self, action):
        if self._t is None:
            raise RuntimeError("reset first")
        a = float(np.asarray(action)[0])
        self._t += 1
        reward = 0.5 + 0.25 * a
        return self._obs(), reward, self._t >= self._spec.episode_length

    def is_success(self, episode):
        return episode.total_reward > 6.0


def tiny_model(rng, act_max=1, num_tasks=0, tasks=None):
    cfg = ModelConfig(obs_dim_max=3, action_dim_max=act_max, latent_dim=16,
                      encoder_dim=16, mlp_dim=16, num_q=2, num_tasks=num_tasks)
    return WorldModel(cfg, rng, tasks=tasks)


def make_trainer(tmp_path, seed=0, total_steps=30, metric="return", **over):
    rng = np.random.default_rng(seed)
    model = tiny_model(rng)
    # seed phase covers one full fake episode, like the heuristic guarantees
    cfg = TrainConfig(total_steps=total_steps, seed_steps=10, batch_size=8, **over)
    env = FakeEnv(metric=metric)
    return OnlineTrainer(model, env, TINY_PLAN, cfg, str(tmp_path), seed=seed)


def read_metrics(path):
    with open(path) as f:
        return [json.loads(line) for line in f]


def test_seed_steps_heuristic():
    assert seed_steps_heuristic(500) == 2500
    assert seed_steps_heuristic(100) == 1000
    assert seed_steps_heuristic(300) == 1500
    with pytest.raises(ValueError):
        seed_steps_heuristic(0)


def test_train_config_validation():
    assert TrainConfig().validate().total_steps == 50_000
    with pytest.raises(ValueError):
        TrainConfig(total_steps=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(utd_ratio=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(q_ema_momentum=1.5).validate()


def test_metrics_writer_format(tmp_path, capsys):
    path = tmp_path / "m.jsonl"
    w = MetricsWriter(str(path))
    w.write(step=5, episode=0, **{"return": 123.456789}, success=True,
            loss_policy=-0.00012345678, grad_norm=3.0)
    w.close()
    rows = read_metrics(path)
    assert len(rows) == 1
    row = rows[0]
    assert list(row) == list(METRIC_FIELDS)          # fixed field order
    assert row["step"] == 5 and row["success"] == 1
    assert row["return"] == pytest.approx(123.457)   # 6 significant digits
    assert row["loss_policy"] == pytest.approx(-0.000123457)
    assert row["loss_value"] is None
    echoed = capsys.readouterr().out
    assert "step=5" in echoed and "return=123.457" in echoed
    assert "loss_value" not in echoed                # nulls stay out of the echo


def test_metrics_writer_rejects_unknown_field(tmp_path):
    w = MetricsWriter(str(tmp_path / "m.jsonl"), echo=False)
    with pytest.raises(ValueError, match="unknown metric"):
        w.write(step=1, bogus=2.0)
    w.close()


def test_online_loop_accounting(tmp_path):
    trainer = make_trainer(tmp_path)
    trainer.run()
    # 30 steps, seed phase 10: one update per post-seed step
    assert trainer.updates_done == 20
    assert trainer.buffer.num_episodes == 3
    rows = read_metrics(tmp_path / "metrics.jsonl")
    assert [r["episode"] for r in rows] == [0, 1, 2]
    assert [r["step"] for r in rows] == [10, 20, 30]
    assert rows[0]["loss_consistency"] is None       # seed-phase episode
    for r in rows:
        assert r["success"] is None
    for r in rows[1:]:
        assert r["loss_consistency"] is not None
        assert r["grad_norm"] is not None and r["grad_norm"] <= 20.0
    assert os.path.exists(tmp_path / "step_30.ckpt")


def test_online_loop_success_metric(tmp_path):
    trainer = make_trainer(tmp_path, metric="success")
    trainer.run()
    rows = read_metrics(tmp_path / "metrics.jsonl")
    assert all(r["success"] in (0, 1) for r in rows)


def test_checkpoint_interval(tmp_path):
    trainer = make_trainer(tmp_path, checkpoint_interval=10)
    trainer.run()
    for step in (10, 20, 30):
        assert os.path.exists(tmp_path / f"step_{step}.ckpt")


def test_run_is_deterministic_per_seed(tmp_path):
    a = make_trainer(tmp_path / "a", seed=7)
    a.run()
    b = make_trainer(tmp_path / "b", seed=7)
    b.run()
    bytes_a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert bytes_a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert a.model.checksum() == b.model.checksum()
    c = make_trainer(tmp_path / "c", seed=8)
    c.run()
    assert a.model.checksum() != c.model.checksum()


def test_saved_checkpoint_matches_final_model(tmp_path):
    trainer = make_trainer(tmp_path)
    trainer.run()
    clone = WorldModel.load(tmp_path / "step_30.ckpt")
    obs = np.linspace(-1, 1, 9).reshape(3, 3).astype(np.float32)
    assert np.array_equal(trainer.model.encode(obs).data, clone.encode(obs).data)


def filled_trainer(tmp_path):
    # fill the buffer without spending planner time
    trainer = make_trainer(tmp_path)
    env, rng = FakeEnv(), np.random.default_rng(0)
    obs = [env.reset(0)]
    acts, rews = [], []
    done = False
    while not done:
        a = rng.uniform(-1, 1, 1).astype(np.float32)
        o, r, done = env.step(a)
        obs.append(o)
        acts.append(a)
        rews.append(r)
    trainer.buffer.add_episode(Episode(np.array(obs), np.array(acts), np.array(rews)))
    return trainer


def test_update_raises_on_poisoned_reward_head(tmp_path):
    trainer = filled_trainer(tmp_path)
    trainer.model.reward[0].weight.data[0, 0] = np.nan
    with pytest.raises(TrainingError, match="non-finite model loss"):
        trainer.update()


def test_update_surfaces_poisoned_encoder(tmp_path):
    # NaN weights hit the TD-target path before the loss value exists
    trainer = filled_trainer(tmp_path)
    trainer.model.encoder[0].weight.data[0, 0] = np.nan
    with pytest.raises(ValueError, match="diverged"):
        trainer.update()


def test_evaluate_reports_and_leaves_model_alone(rng):
    model = tiny_model(rng)
    before = model.checksum()
    result = evaluate(model, FakeEnv(), 2, np.random.default_rng(3), TINY_PLAN)
    assert model.checksum() == before
    assert result["success_rate"] is None
    assert len(result["returns"]) == 2
    assert result["mean_return"] == pytest.approx(float(np.mean(result["returns"])))
    again = evaluate(model, FakeEnv(), 2, np.random.default_rng(3), TINY_PLAN)
    assert again["returns"] == result["returns"]


def test_evaluate_success_rate(rng):
    model = tiny_model(rng)
    result = evaluate(model, FakeEnv(metric="success"), 3, np.random.default_rng(1), TINY_PLAN)
    assert result["success_rate"] is not None
    assert 0.0 <= result["success_rate"] <= 1.0


def test_finetune_touches_only_new_embedding_row(tmp_path, rng):
    tasks = [ModelTask("one", 3, 1, 0.99), ModelTask("two", 2, 1, 0.95)]
    model = tiny_model(rng, num_tasks=2, tasks=tasks)
    new_id = model.append_task(ModelTask("fake-loop", 3, 1, 0.97), rng, source_task="one")
    frozen_rows = model.task_emb.data[:2].copy()
    cfg = TrainConfig(total_steps=20, seed_steps=10, batch_size=8)
    OnlineTrainer(model, FakeEnv(), TINY_PLAN, cfg, str(tmp_path),
                  seed=1, fixed_task_id=new_id).run()
    assert np.array_equal(model.task_emb.data[:2], frozen_rows)
    assert not np.array_equal(model.task_emb.data[2],
                              model.task_emb.data[0])  # the new row did train


def fake_dataset(path, rng):
    tasks = [TaskRecord("alpha", 3, 1, 10, 0.99), TaskRecord("beta", 2, 2, 10, 0.95)]
    episodes = []
    for task_id, t in enumerate(tasks):
        for _ in range(3):
            episodes.append(Episode(
                rng.standard_normal((11, t.obs_dim)).astype(np.float32),
                rng.uniform(-1, 1, (10, t.act_dim)).astype(np.float32),
                rng.uniform(0, 1, 10).astype(np.float32),
                task_id=task_id))
    save_dataset(path, tasks, episodes)
    return tasks


def test_offline_multitask_trains_and_checks_masks(tmp_path, rng):
    data = tmp_path / "mix.tdd2"
    fake_dataset(str(data), rng)
    cfg = TrainConfig(multitask_batch_size=16, offline_updates=4)
    mc = ModelConfig(latent_dim=16, encoder_dim=16, mlp_dim=16, num_q=2)
    model = train_offline_multitask(str(data), mc, TINY_PLAN, cfg,
                                    str(tmp_path / "out"), seed=0)
    assert model.multitask and model.config.num_tasks == 2
    assert model.config.obs_dim_max == 3 and model.config.action_dim_max == 2
    assert os.path.exists(tmp_path / "out" / "step_4.ckpt")
    rows = read_metrics(tmp_path / "out" / "metrics.jsonl")
    assert rows and rows[-1]["step"] == 4
    norms = np.linalg.norm(model.task_emb.data, axis=1)
    assert np.all(norms <= 1.0 + 1e-6)


def test_offline_multitask_needs_two_tasks(tmp_path, rng):
    tasks = [TaskRecord("solo", 3, 1, 10, 0.99)]
    eps = [Episode(rng.standard_normal((11, 3)).astype(np.float32),
                   rng.uniform(-1, 1, (10, 1)).astype(np.float32),
                   rng.uniform(0, 1, 10).astype(np.float32))]
    save_dataset(str(tmp_path / "solo.tdd2"), tasks, eps)
    with pytest.raises(ValueError, match=">= 2 tasks"):
        train_offline_multitask(str(tmp_path / "solo.tdd2"), ModelConfig(),
                                TINY_PLAN, TrainConfig(), str(tmp_path / "out"))
