"""Command-line entry point.

Subcommands: train, eval, train-offline, finetune, export-dataset,
inspect-checkpoint, report. Exit codes: 0 success, 1 usage/config error,
2 runtime failure. The output directory comes from --out, falling back to the
TDMPC_OUT environment variable, then the current directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .buffer import DatasetError, TaskRecord, load_dataset, save_dataset
from .config import Config, ConfigError, load_config, serialize_config
from .envs import MetricMismatchError, discount_heuristic, make_env, task_names
from .model import ModelTask, WorldModel
from .nn import ContainerError, load_tensors
from .planner import PlanningError
from .trainer import (OnlineTrainer, TrainingError, evaluate, finetune,
                      train_offline_multitask)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    p.add_argument("--config", action="append", default=[],
                   help="config file; repeatable, later files override earlier")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="single config override; highest precedence")
    p.add_argument("--seed", type=int, default=None, help="run seed")
    p.add_argument("--out", default=None, help="output directory (default $TDMPC_OUT or .)")


def _build_parser():
    parser = _Parser(prog="tdmpc",
                     description="Model-based RL: latent world model + sampling planner")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", help="online single-task training")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--task", default=None, help="task name (default: from checkpoint)")
    p.add_argument("--episodes", type=int, default=10)
    _add_common(p)

    p = sub.add_parser("train-offline", help="multi-task training on a dataset file")
    p.add_argument("dataset")
    _add_common(p)

    p = sub.add_parser("finetune", help="adapt a multi-task checkpoint to a new task")
    p.add_argument("checkpoint")
    p.add_argument("--task", required=True, help="new task name")
    p.add_argument("--source-task", default=None,
                   help="copy this task's embedding (default: random unit vector)")
    _add_common(p)

    p = sub.add_parser("export-dataset", help="merge run buffers into one dataset file")
    p.add_argument("output")
    p.add_argument("inputs", nargs="+", help="buffer/dataset files to merge")

    p = sub.add_parser("inspect-checkpoint", help="print config header and parameter census")
    p.add_argument("checkpoint")

    p = sub.add_parser("report", help="render figures from a run's metrics file")
    p.add_argument("run_dir")
    return parser


def _out_dir(args):
    return args.out or os.environ.get("TDMPC_OUT") or "."


def _load(args):
    return load_config(args.config, args.set, seed=args.seed)


def _single_task_model(config: Config, spec, seed):
    mc = config.model
    if mc.obs_dim_max == 0:
        mc = replace(mc, obs_dim_max=spec.obs_dim, action_dim_max=spec.act_dim)
    if spec.obs_dim > mc.obs_dim_max or spec.act_dim > mc.action_dim_max:
        raise ValueError(f"task dims ({spec.obs_dim}, {spec.act_dim}) exceed model maxima "
                         f"({mc.obs_dim_max}, {mc.action_dim_max})")
    task = ModelTask(spec.name, spec.obs_dim, spec.act_dim,
                     discount_heuristic(spec.effective_length))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]).generate_state(4))
    return WorldModel(mc, rng, tasks=[task])


def _cmd_train(args):
    config = _load(args)
    out = _out_dir(args)
    env = make_env(config.env.task, config.seed)
    model = _single_task_model(config, env.spec(), config.seed)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(serialize_config(config))
    trainer = OnlineTrainer(model, env, config.planner, config.train, out,
                            seed=config.seed, buffer_capacity=config.buffer.capacity)
    trainer.run()
    spec = env.spec()
    record = TaskRecord(spec.name, spec.obs_dim, spec.act_dim,
                        spec.effective_length, discount_heuristic(spec.effective_length))
    save_dataset(os.path.join(out, "buffer.tdd2"), [record], list(trainer.buffer.episodes))
    return 0


def _cmd_eval(args):
    config = _load(args)
    model = WorldModel.load(args.checkpoint)
    known = [t.name for t in model.tasks]
    task_name = args.task or (known[0] if not model.multitask else None)
    if task_name is None:
        raise UsageError(f"--task required for a multi-task checkpoint (tasks: {known})")
    env = make_env(task_name, config.seed)
    spec = env.spec()
    if model.multitask:
        if task_name not in known:
            raise ValueError(f"checkpoint has no task {task_name!r} (tasks: {known})")
        task_id = known.index(task_name)
        entry = model.tasks[task_id]
    else:
        task_id = None
        entry = model.tasks[0]
    if (entry.obs_dim, entry.act_dim) != (spec.obs_dim, spec.act_dim):
        raise ValueError(
            f"checkpoint task dims (obs {entry.obs_dim}, act {entry.act_dim}) do not "
            f"match environment {task_name!r} (obs {spec.obs_dim}, act {spec.act_dim})")
    result = evaluate(model, env, args.episodes,
                      np.random.default_rng([config.seed, 777]),
                      config.planner, task_id=task_id)
    print(f"task = {task_name}")
    print(f"episodes = {args.episodes}")
    print(f"mean_return = {result['mean_return']:.6g}")
    if result["success_rate"] is not None:
        print(f"success_rate = {result['success_rate']:.6g}")
    return 0


def _cmd_train_offline(args):
    config = _load(args)
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(serialize_config(config))
    train_offline_multitask(args.dataset, config.model, config.planner,
                            config.train, out, seed=config.seed)
    return 0


def _cmd_finetune(args):
    config = _load(args)
    out = _out_dir(args)
    model = WorldModel.load(args.checkpoint)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(serialize_config(config))
    finetune(model, args.task, args.source_task, config.planner, config.train,
             out, seed=config.seed)
    return 0


def _cmd_export_dataset(args):
    tasks: list[TaskRecord] = []
    episodes = []
    index = {}
    for path in args.inputs:
        in_tasks, in_eps = load_dataset(path)
        remap = {}
        for i, t in enumerate(in_tasks):
            if t.name in index:
                have = tasks[index[t.name]]
                if (have.obs_dim, have.act_dim) != (t.obs_dim, t.act_dim):
                    raise DatasetError(f"task {t.name!r} has conflicting dims across inputs")
            else:
                index[t.name] = len(tasks)
                tasks.append(t)
            remap[i] = index[t.name]
        for ep in in_eps:
            ep.task_id = remap[ep.task_id]
            episodes.append(ep)
    save_dataset(args.output, tasks, episodes)
    print(f"wrote {args.output}: {len(tasks)} tasks, {len(episodes)} episodes, "
          f"{sum(len(e) for e in episodes)} transitions")
    return 0


def _cmd_inspect(args):
    arrays, header = load_tensors(args.checkpoint)
    print(header.rstrip("\n"))
    print()
    total = 0
    for name, arr in arrays.items():
        total += arr.size
        print(f"{name:40s} {str(arr.dtype):8s} {'x'.join(map(str, arr.shape)):16s} {arr.size}")
    print(f"\ntotal parameters: {total}")
    return 0


def _cmd_report(args):
    from .report import render_report
    files = render_report(args.run_dir)
    for f in files:
        print(f)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "train-offline": _cmd_train_offline,
    "finetune": _cmd_finetune,
    "export-dataset": _cmd_export_dataset,
    "inspect-checkpoint": _cmd_inspect,
    "report": _cmd_report,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingError, PlanningError, ContainerError, DatasetError,
            MetricMismatchError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
