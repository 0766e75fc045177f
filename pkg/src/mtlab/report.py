"""Render matplotlib figures next to the delimited outputs of a run or sweep."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402

DPI = 150


def _read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = defaultdict(list)
        for row in reader:
            for key, value in row.items():
                columns[key].append(np.nan if value in ("", None) else float(value))
    if not columns:
        raise ConfigError(f"{path}: empty table")
    return {k: np.asarray(v) for k, v in columns.items()}


def _task_columns(table: dict[str, np.ndarray], prefix: str) -> list[str]:
    cols = [c for c in table if c.startswith(prefix)]
    return sorted(cols, key=lambda c: int(c.rsplit("_", 1)[1]))


def _line_figure(path: Path, x, series: dict[str, np.ndarray], xlabel, ylabel, logy=False):
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, y in series.items():
        ax.plot(x, y, label=label, linewidth=1.4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def render_run(run_dir) -> list[Path]:
    """Weight, loss, metric, excess and stationarity curves for one run."""
    run_dir = Path(run_dir)
    table = _read_csv(run_dir / "metrics.csv")
    step = table["step"]
    written = []

    alpha_cols = _task_columns(table, "alpha_")
    written.append(_line_figure(
        run_dir / "weights.png", step,
        {c: table[c] for c in alpha_cols}, "step", "task weight"))

    loss_cols = _task_columns(table, "train_loss_")
    written.append(_line_figure(
        run_dir / "train_loss.png", step,
        {c: table[c] for c in loss_cols}, "step", "train loss"))

    metric_cols = _task_columns(table, "test_metric_")
    written.append(_line_figure(
        run_dir / "test_metric.png", step,
        {c: table[c] for c in metric_cols}, "step", "test metric"))

    raw_cols = _task_columns(table, "raw_excess_")
    if raw_cols and np.isfinite(table[raw_cols[0]]).any():
        series = {c: table[c] for c in raw_cols}
        series.update({c: table[c] for c in _task_columns(table, "relative_excess_")})
        written.append(_line_figure(
            run_dir / "excess.png", step, series, "step", "excess-risk estimate"))

    gap = np.maximum(table["stationarity_gap"], 1e-300)
    written.append(_line_figure(
        run_dir / "stationarity.png", step,
        {"stationarity gap": gap}, "step", "weighted gradient norm^2", logy=True))
    return written


def render_sweep(sweep_dir) -> list[Path]:
    """Per-strategy curves against the noise level, one figure per column."""
    sweep_dir = Path(sweep_dir)
    with open(sweep_dir / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{sweep_dir}/sweep.csv: empty sweep")
    by_strategy: dict[str, list[dict]] = defaultdict(list)
    for row in rows:
        by_strategy[row["strategy"]].append(row)

    targets = [
        ("clean_task_metric_mean", "clean-task metric", "clean_metric.png"),
        ("noisy_task_metric", "noisy-task metric", "noisy_metric.png"),
        ("final_clean_weight_sum", "clean weight sum", "clean_weights.png"),
    ]
    written = []
    for column, label, filename in targets:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for strategy, entries in sorted(by_strategy.items()):
            entries = sorted(entries, key=lambda r: float(r["noise_level"]))
            x = [float(r["noise_level"]) for r in entries]
            y = [float(r[column]) for r in entries]
            ax.plot(x, y, marker="o", label=strategy, linewidth=1.4)
        ax.set_xlabel("noise level")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = sweep_dir / filename
        fig.savefig(path, dpi=DPI)
        plt.close(fig)
        written.append(path)
    return written
