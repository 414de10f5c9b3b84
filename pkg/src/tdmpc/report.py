"""Render training-run figures from a run directory's metrics file.

Writes PNGs next to metrics.jsonl: learning curve (return or success per
episode), loss components, gradient norm, and policy entropy. Headless-safe.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_metrics(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _series(rows, key):
    xs, ys = [], []
    for r in rows:
        if r.get(key) is not None:
            xs.append(r["step"])
            ys.append(r[key])
    return xs, ys


def _save(fig, path, written):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)


def render_report(run_dir):
    """Returns the list of files written."""
    metrics_path = os.path.join(run_dir, "metrics.jsonl")
    rows = read_metrics(metrics_path)
    if not rows:
        raise ValueError(f"no metric rows in {metrics_path}")
    written = []

    xs, ys = _series(rows, "return")
    if ys:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, ys, lw=1.0, alpha=0.5, color="tab:blue")
        if len(ys) >= 10:
            k = max(1, len(ys) // 20)
            smooth = [sum(ys[max(0, i - k):i + 1]) / len(ys[max(0, i - k):i + 1])
                      for i in range(len(ys))]
            ax.plot(xs, smooth, lw=2.0, color="tab:blue")
        ax.set_xlabel("environment step")
        ax.set_ylabel("episode return")
        ax.set_title("learning curve")
        _save(fig, os.path.join(run_dir, "return.png"), written)

    xs, ys = _series(rows, "success")
    if ys:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, ys, ".", ms=3, color="tab:green")
        ax.set_xlabel("environment step")
        ax.set_ylabel("episode success")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title("success per episode")
        _save(fig, os.path.join(run_dir, "success.png"), written)

    loss_keys = ["loss_consistency", "loss_reward", "loss_value", "loss_policy"]
    if any(_series(rows, k)[1] for k in loss_keys):
        fig, ax = plt.subplots(figsize=(6, 4))
        for k in loss_keys:
            xs, ys = _series(rows, k)
            if ys:
                ax.plot(xs, ys, lw=1.2, label=k.replace("loss_", ""))
        ax.set_xlabel("environment step")
        ax.set_ylabel("loss")
        ax.set_yscale("symlog", linthresh=1e-3)
        ax.legend(fontsize=8)
        ax.set_title("loss components")
        _save(fig, os.path.join(run_dir, "losses.png"), written)

    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    xs, ys = _series(rows, "grad_norm")
    if ys:
        ax.plot(xs, ys, lw=1.0, color="tab:red", label="grad norm (post-clip)")
        plotted = True
    xs, ys = _series(rows, "pi_entropy")
    if ys:
        ax2 = ax.twinx()
        ax2.plot(xs, ys, lw=1.0, color="tab:purple", label="policy entropy")
        ax2.set_ylabel("policy entropy")
        plotted = True
    if plotted:
        ax.set_xlabel("environment step")
        ax.set_ylabel("gradient norm")
        ax.set_title("training stability")
        _save(fig, os.path.join(run_dir, "stability.png"), written)
    else:
        plt.close(fig)
    return written
