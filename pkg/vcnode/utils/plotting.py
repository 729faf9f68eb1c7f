"""
Plot data: CSV series plus static SVG renderings.
"""
import logging
from pathlib import Path

import matplotlib
import numpy as np

from dynamics.envsim.pendulum import wrap_angle
from vcnode.utils.metrics import write_rows

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

EPISODE_FIELDS = ("time", "theta", "omega", "u", "reward")
SERIES_CONTEXT = "context"
SERIES_PREDICTED = "predicted"
SERIES_TRUTH = "truth"
SERIES_COLORS = {SERIES_CONTEXT: "tab:red", SERIES_PREDICTED: "tab:blue", SERIES_TRUTH: "tab:gray"}


def episode_rows(record):
    n = len(record.rewards)
    return [
        {
            "time": float(record.times[t]),
            "theta": float(wrap_angle(record.states[t, 0])),
            "omega": float(record.states[t, 1]),
            "u": float(record.controls[t, 0]),
            "reward": float(record.rewards[t]),
        }
        for t in range(n)
    ]


def write_episode_csv(record, path):
    return write_rows(path, episode_rows(record), EPISODE_FIELDS)


def prediction_rows(times, context, predicted, truth):
    """
    Long-format rows of one window: `series`, `time` and one column per
    feature. `predicted` and `truth` share the same times.
    """
    split = len(context) - 1
    t_context, t_target = times[:split + 1], times[split + 1:]
    if len(predicted) != len(truth) or len(predicted) != len(t_target):
        raise ValueError(
            f"Predicted ({len(predicted)}) and true ({len(truth)}) series must both cover {len(t_target)} samples"
        )
    rows = []
    for series, t_series, values in (
        (SERIES_CONTEXT, t_context, context),
        (SERIES_PREDICTED, t_target, predicted),
        (SERIES_TRUTH, t_target, truth),
    ):
        for t, x in zip(t_series, values):
            rows.append({"series": series, "time": float(t), **{f"x{i}": float(v) for i, v in enumerate(x)}})
    return rows


def write_prediction_csv(times, context, predicted, truth, path):
    fields = ["series", "time"] + [f"x{i}" for i in range(np.shape(context)[-1])]
    return write_rows(path, prediction_rows(times, context, predicted, truth), fields)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def render_episode(record, path):
    rows = episode_rows(record)
    fig, axes = plt.subplots(len(EPISODE_FIELDS) - 1, 1, sharex=True, figsize=(6, 7))
    times = [r["time"] for r in rows]
    for ax, name in zip(axes, EPISODE_FIELDS[1:]):
        ax.plot(times, [r[name] for r in rows], linewidth=1.0)
        ax.set_ylabel(name)
    axes[-1].set_xlabel("time [s]")
    return _save(fig, path)


def render_prediction(rows, path):
    """Phase portrait of the first two features, one colour per series."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for series, color in SERIES_COLORS.items():
        points = [r for r in rows if r["series"] == series]
        if not points:
            continue
        x0 = [float(r["x0"]) for r in points]
        x1 = [float(r["x1"]) if "x1" in r else 0.0 for r in points]
        marker = "+" if series == SERIES_CONTEXT else None
        linestyle = "none" if series == SERIES_CONTEXT else "-"
        ax.plot(x0, x1, color=color, marker=marker, linestyle=linestyle, label=series)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.legend()
    return _save(fig, path)


def render_curve(values, path, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(np.arange(1, len(values) + 1), values, linewidth=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(fig, path)
