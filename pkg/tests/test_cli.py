"""Command-line surface: exit codes, artifacts, and output routing."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from tdmpc.buffer import Episode, TaskRecord, load_dataset, save_dataset
from tdmpc.cli import main
from tdmpc.model import ModelConfig, ModelTask, WorldModel

MINI_SETS = ["--set", "model.latent_dim=16", "--set", "model.encoder_dim=16",
             "--set", "model.mlp_dim=16", "--set", "model.num_q=2"]
FAST_PLAN = ["--set", "planner.population=16", "--set", "planner.policy_prior_samples=2",
             "--set", "planner.num_elites=4", "--set", "planner.iterations=1",
             "--set", "planner.horizon=1"]


def write_dataset(path, name="alpha", obs_dim=3, act_dim=1, seed=0, episodes=2):
    rng = np.random.default_rng(seed)
    task = TaskRecord(name, obs_dim, act_dim, 10, 0.99)
    eps = [Episode(rng.standard_normal((11, obs_dim)).astype(np.float32),
                   rng.uniform(-1, 1, (10, act_dim)).astype(np.float32),
                   rng.uniform(0, 1, 10).astype(np.float32))
           for _ in range(episodes)]
    save_dataset(str(path), [task], eps)


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "COMMAND" in capsys.readouterr().out


def test_unknown_command_is_usage_error(capsys):
    assert main(["launch"]) == 1
    assert "error:" in capsys.readouterr().err


def test_bad_set_is_usage_error(capsys):
    assert main(["train", "--set", "model.bogus=1"]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_unknown_task_is_runtime_error(capsys):
    assert main(["train", "--set", "env.task=flying", "--out", "/tmp/x"]) == 2
    assert "unknown task" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_error(capsys):
    assert main(["eval", "/nonexistent.ckpt"]) == 2
    assert "error:" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tdmpc.cli"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "COMMAND" in proc.stdout


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    """A 30-step train run: pure seed phase, but every artifact gets written."""
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--out", str(out), "--seed", "1",
                 "--set", "train.total_steps=30", *MINI_SETS])
    assert code == 0
    return out


def test_train_writes_artifacts(short_run):
    assert (short_run / "config.txt").exists()
    assert (short_run / "step_30.ckpt").exists()
    assert (short_run / "metrics.jsonl").exists()
    assert (short_run / "buffer.tdd2").exists()
    text = (short_run / "config.txt").read_text()
    assert "model.latent_dim = 16" in text
    assert "env.task = pendulum-swingup" in text


def test_train_checkpoint_is_loadable(short_run):
    model = WorldModel.load(short_run / "step_30.ckpt")
    assert model.config.latent_dim == 16
    assert [t.name for t in model.tasks] == ["pendulum-swingup"]


def test_out_dir_env_fallback(tmp_path, monkeypatch):
    target = tmp_path / "routed"
    monkeypatch.setenv("TDMPC_OUT", str(target))
    code = main(["train", "--seed", "2", "--set", "train.total_steps=12", *MINI_SETS])
    assert code == 0
    assert (target / "step_12.ckpt").exists()


def test_eval_prints_deterministic_summary(short_run, capsys):
    argv = ["eval", str(short_run / "step_30.ckpt"), "--episodes", "1",
            "--seed", "5", *FAST_PLAN]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert "task = pendulum-swingup" in first
    assert "mean_return = " in first
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_eval_dim_mismatch(short_run, capsys):
    code = main(["eval", str(short_run / "step_30.ckpt"),
                 "--task", "pointmass-reach", "--episodes", "1"])
    assert code == 2
    assert "do not match" in capsys.readouterr().err


def test_inspect_checkpoint(short_run, capsys):
    assert main(["inspect-checkpoint", str(short_run / "step_30.ckpt")]) == 0
    out = capsys.readouterr().out
    assert "format = worldmodel-checkpoint" in out
    assert "model.latent_dim = 16" in out
    assert "encoder.0.weight" in out
    assert "total parameters:" in out


def test_export_dataset_merges_and_dedupes(tmp_path, capsys):
    a, b, c = tmp_path / "a.tdd2", tmp_path / "b.tdd2", tmp_path / "c.tdd2"
    write_dataset(a, "alpha", seed=1)
    write_dataset(b, "beta", obs_dim=2, act_dim=2, seed=2)
    write_dataset(c, "alpha", seed=3)            # same task again
    merged = tmp_path / "merged.tdd2"
    assert main(["export-dataset", str(merged), str(a), str(b), str(c)]) == 0
    assert "2 tasks, 6 episodes" in capsys.readouterr().out
    tasks, episodes = load_dataset(str(merged))
    assert [t.name for t in tasks] == ["alpha", "beta"]
    assert sorted({ep.task_id for ep in episodes}) == [0, 1]
    assert sum(1 for ep in episodes if ep.task_id == 0) == 4


def test_export_dataset_rejects_dim_conflicts(tmp_path, capsys):
    a, b = tmp_path / "a.tdd2", tmp_path / "b.tdd2"
    write_dataset(a, "alpha", obs_dim=3)
    write_dataset(b, "alpha", obs_dim=4)
    assert main(["export-dataset", str(tmp_path / "m.tdd2"), str(a), str(b)]) == 2
    assert "conflicting dims" in capsys.readouterr().err


def test_train_offline_cli(tmp_path, capsys):
    a, b = tmp_path / "a.tdd2", tmp_path / "b.tdd2"
    write_dataset(a, "alpha", seed=1)
    write_dataset(b, "beta", obs_dim=2, act_dim=2, seed=2)
    merged = tmp_path / "mix.tdd2"
    assert main(["export-dataset", str(merged), str(a), str(b)]) == 0
    capsys.readouterr()
    out = tmp_path / "offline"
    code = main(["train-offline", str(merged), "--out", str(out), "--seed", "0",
                 *MINI_SETS, "--set", "train.offline_updates=2",
                 "--set", "train.multitask_batch_size=8"])
    assert code == 0
    assert (out / "step_2.ckpt").exists()
    model = WorldModel.load(out / "step_2.ckpt")
    assert model.multitask and model.config.num_tasks == 2


def test_finetune_cli_appends_task(tmp_path):
    cfg = ModelConfig(obs_dim_max=3, action_dim_max=1, latent_dim=16,
                      encoder_dim=16, mlp_dim=16, num_q=2, num_tasks=2)
    tasks = [ModelTask("one", 3, 1, 0.99), ModelTask("two", 2, 1, 0.95)]
    model = WorldModel(cfg, np.random.default_rng(0), tasks=tasks)
    src = tmp_path / "multi.ckpt"
    model.save(str(src))
    out = tmp_path / "ft"
    code = main(["finetune", str(src), "--task", "pendulum-swingup",
                 "--source-task", "one", "--out", str(out),
                 "--set", "train.total_steps=20"])
    assert code == 0
    tuned = WorldModel.load(out / "step_20.ckpt")
    assert [t.name for t in tuned.tasks] == ["one", "two", "pendulum-swingup"]
    # 20 steps sit inside the seed phase: the copied row is still bit-equal
    assert np.array_equal(tuned.task_emb.data[2], model.task_emb.data[0])
    assert np.array_equal(tuned.task_emb.data[:2], model.task_emb.data[:2])


def test_report_renders_figures(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    rows = []
    rng = np.random.default_rng(0)
    for i in range(30):
        rows.append({"step": (i + 1) * 500, "episode": i,
                     "return": float(100 + 10 * i + rng.normal()),
                     "success": int(i % 3 == 0),
                     "loss_consistency": float(np.exp(-i / 10)),
                     "loss_reward": 0.05, "loss_value": 0.04,
                     "loss_policy": -0.2, "grad_norm": float(5 + rng.uniform()),
                     "pi_entropy": 3.0 - i * 0.05})
    with open(run / "metrics.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")
    assert main(["report", str(run)]) == 0
    listed = capsys.readouterr().out.splitlines()
    for name in ("return.png", "success.png", "losses.png", "stability.png"):
        assert (run / name).exists()
        assert any(line.endswith(name) for line in listed)


def test_report_needs_rows(tmp_path, capsys):
    run = tmp_path / "empty"
    run.mkdir()
    (run / "metrics.jsonl").write_text("\n")
    assert main(["report", str(run)]) == 2
    assert "no metric rows" in capsys.readouterr().err
