"""Static figures from metrics logs, evaluation reports and trace files."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class PlotInputError(ValueError):
    pass


def read_metrics(path) -> List[dict]:
    path = Path(path)
    out = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise PlotInputError(f"{path}: {exc.strerror}") from None
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except ValueError:
            raise PlotInputError(f"{path}:{i}: not a JSON object") from None
        if not isinstance(rec, dict) or "iter" not in rec or "mean_reward" not in rec:
            raise PlotInputError(f"{path}:{i}: missing 'iter' or 'mean_reward'")
        out.append(rec)
    if not out:
        raise PlotInputError(f"{path}: no metrics records")
    return out


def read_trace(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise PlotInputError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or "v_x" not in header or "step" not in header:
            raise PlotInputError(f"{path}:1: header lacks trace columns")
        cols: List[List[float]] = [[] for _ in header]
        for i, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise PlotInputError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise PlotInputError(f"{path}:{i}: non-numeric field") from None
            for c, v in zip(cols, vals):
                c.append(v)
    return {h: np.asarray(c) for h, c in zip(header, cols)}


def read_report(path) -> dict:
    path = Path(path)
    try:
        rep = json.loads(path.read_text())
    except OSError as exc:
        raise PlotInputError(f"{path}: {exc.strerror}") from None
    except ValueError as exc:
        raise PlotInputError(f"{path}:{exc.lineno}: invalid JSON") from None
    if "cases" not in rep:
        raise PlotInputError(f"{path}:1: missing 'cases'")
    return rep


def _labels(paths: Sequence[Path]) -> List[str]:
    labels = [p.stem for p in paths]
    if len(set(labels)) < len(labels):
        labels = [f"{p.parent.name}/{p.stem}" for p in paths]
    return labels


def plot_training(paths: Sequence, out_path) -> Path:
    """Mean reward and action-noise std against iteration, one curve per file."""
    paths = [Path(p) for p in paths]
    runs = [read_metrics(p) for p in paths]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for label, recs in zip(_labels(paths), runs):
        it = [r["iter"] for r in recs]
        axes[0].plot(it, [r["mean_reward"] for r in recs], label=label)
        axes[1].plot(it, [r.get("action_std", math.nan) for r in recs], label=label)
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("mean reward per step")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("action noise std")
    for ax in axes:
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_tracking(path, out_path) -> Path:
    """Commanded against actual velocity and gripper position over one trace."""
    tr = read_trace(path)
    t = tr["step"]
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(t, tr["v_x"], label="v_x")
    axes[0].plot(t, tr["v_x_cmd"], "--", label="v_x cmd")
    axes[0].set_ylabel("m/s")
    for ax, axis in zip(axes[1:], "xz"):
        ax.plot(t, tr[f"p_ee_{axis}"], label=f"p_ee {axis}")
        ax.plot(t, tr[f"p_ee_cmd_{axis}"], "--", label=f"p_ee {axis} cmd")
        ax.set_ylabel("m")
    axes[-1].set_xlabel("control step")
    for ax in axes:
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_joint_violation(paths: Sequence, out_path) -> Path:
    """Per-joint fraction of steps beyond the arm limits, grouped by report."""
    paths = [Path(p) for p in paths]
    reps = [read_report(p) for p in paths]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    n = len(reps)
    width = 0.8 / max(n, 1)
    x = np.arange(3)
    for i, (label, rep) in enumerate(zip(_labels(paths), reps)):
        frac = np.mean([c["joint_violation"] for c in rep["cases"]], axis=0)
        ax.bar(x + (i - (n - 1) / 2) * width, frac, width, label=label)
    ax.set_xticks(x, ["a1", "a2", "a3"])
    ax.set_ylabel("fraction of steps beyond limit")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
