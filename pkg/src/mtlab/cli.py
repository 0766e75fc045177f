"""Command-line front end: run, sweep, compare, report.

Exit codes: 0 success, 2 configuration or usage errors (message names the
field or path), 3 numerical abort during training. Relative output
directories resolve under $MTLAB_OUTPUT_ROOT when that variable is set.

Sweep cells derive their seeds as base_seed XOR crc32("strategy|level"), so
every cell is individually reproducible from its resolved config echo.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import zlib
from pathlib import Path

from . import config as config_mod
from .errors import ConfigError, NumericsError
from .model import pareto_dominates

SWEEP_COLUMNS = [
    "strategy",
    "noise_level",
    "clean_task_metric_mean",
    "noisy_task_metric",
    "final_clean_weight_sum",
]


def resolve_output_dir(directory: str) -> Path:
    root = os.environ.get("MTLAB_OUTPUT_ROOT", "")
    path = Path(directory)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _load_resolved(config_path) -> dict:
    return config_mod.resolve_config(config_mod.load_config(config_path))


def cmd_run(config_path) -> int:
    try:
        resolved = _load_resolved(config_path)
        run_dir = resolve_output_dir(resolved["output"]["directory"])
        run_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = config_mod.execute(resolved)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerics abort: {exc}", file=sys.stderr)
        return 3
    config_mod.write_run_outputs(run_dir, result)
    metrics = ", ".join(f"{v:.4f}" for v in result.summary["final_test_metrics"])
    alpha = ", ".join(f"{v:.4f}" for v in result.summary["final_alpha"])
    print(f"run complete: {run_dir}")
    print(f"  final test metrics: [{metrics}]")
    print(f"  final alpha:        [{alpha}]")
    return 0


def cell_seed(base_seed: int, strategy: str, level: float) -> int:
    """Stable per-cell seed: base XOR crc32 of the cell key."""
    key = f"{strategy}|{level:.6g}".encode()
    return int(base_seed) ^ (zlib.crc32(key) & 0x7FFFFFFF)


def derive_cell_config(base: dict, strategy: str, level: float) -> dict:
    cell = copy.deepcopy(base)
    cell["train"]["strategy"] = strategy
    cell["train"]["seed"] = cell_seed(base["train"]["seed"], strategy, level)
    for spec in cell["noise"]:
        spec["level"] = level
        spec["seed"] = cell_seed(spec["seed"], strategy, level)
    cell["output"]["directory"] = str(
        Path(base["output"]["directory"]) / "cells" / f"{strategy}_l{level:g}"
    )
    return cell


def _sweep_row(resolved: dict, summary: dict, strategy: str, level: float) -> dict:
    noisy = sorted({s["task_id"] for s in resolved["noise"]})
    clean = [i for i in range(summary["num_tasks"]) if i not in noisy]
    metrics = summary["final_test_metrics"]
    alpha = summary["final_alpha"]
    return {
        "strategy": strategy,
        "noise_level": level,
        "clean_task_metric_mean": sum(metrics[i] for i in clean) / len(clean),
        "noisy_task_metric": sum(metrics[i] for i in noisy) / len(noisy),
        "final_clean_weight_sum": sum(alpha[i] for i in clean),
    }


def cmd_sweep(config_path, levels: list[float], strategies: list[str]) -> int:
    try:
        base = _load_resolved(config_path)
        if not base["noise"]:
            raise ConfigError("sweep: base config needs a noise block to vary")
        for name in strategies:
            if name not in config_mod.STRATEGY_NAMES:
                raise ConfigError(f"sweep: unknown strategy {name!r}")
        for level in levels:
            if not 0.0 <= level <= 1.0:
                raise ConfigError(f"sweep: noise level {level} outside [0, 1]")
        noisy = {s["task_id"] for s in base["noise"]}
        m = config_mod._num_tasks(base)
        if len(noisy) >= m:
            raise ConfigError("sweep: at least one task must stay clean")
        sweep_dir = resolve_output_dir(base["output"]["directory"])
        sweep_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    rows = []
    failures = []
    for strategy in strategies:
        for level in levels:
            cell = derive_cell_config(base, strategy, level)
            cell_dir = resolve_output_dir(cell["output"]["directory"])
            try:
                result = config_mod.execute(cell)
                config_mod.write_run_outputs(cell_dir, result)
                rows.append(_sweep_row(cell, result.summary, strategy, level))
            except (ConfigError, NumericsError, OSError) as exc:
                failures.append(
                    {"strategy": strategy, "noise_level": level, "error": str(exc)}
                )
                print(f"cell failed ({strategy}, {level}): {exc}", file=sys.stderr)

    with open(sweep_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    if failures:
        (sweep_dir / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    print(f"sweep complete: {len(rows)} cells ok, {len(failures)} failed -> {sweep_dir}")
    return 0


def cmd_compare(run_dirs, out_csv: str = "compare.csv") -> int:
    entries = []
    for raw_dir in run_dirs:
        path = Path(raw_dir) / "summary.json"
        try:
            summary = json.loads(path.read_text())
            entries.append((Path(raw_dir).name or str(raw_dir), summary))
            for key in ("final_test_metrics", "final_alpha", "final_train_losses"):
                if key not in summary:
                    raise ConfigError(f"{path}: missing field {key}")
        except (OSError, json.JSONDecodeError, ConfigError) as exc:
            print(f"config error: cannot read {path}: {exc}", file=sys.stderr)
            return 2

    m = entries[0][1]["num_tasks"]
    if any(s["num_tasks"] != m for _, s in entries):
        print("config error: runs disagree on the task count", file=sys.stderr)
        return 2

    dominated_by: dict[str, list[str]] = {name: [] for name, _ in entries}
    for name_a, sum_a in entries:
        for name_b, sum_b in entries:
            if name_a == name_b:
                continue
            if sum_a["final_train_losses"] is None or sum_b["final_train_losses"] is None:
                continue
            if pareto_dominates(sum_a["final_train_losses"], sum_b["final_train_losses"]):
                dominated_by[name_b].append(name_a)

    header = ["run"]
    header += [f"test_metric_{i}" for i in range(m)]
    header += [f"alpha_{i}" for i in range(m)]
    header += ["pareto_dominated_by"]
    table = [header]
    for name, summary in entries:
        row = [name]
        row += [f"{v:.6g}" for v in summary["final_test_metrics"]]
        row += [f"{v:.6g}" for v in summary["final_alpha"]]
        row.append(";".join(dominated_by[name]) or "-")
        table.append(row)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())

    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in table:
            writer.writerow(row)
    return 0


def cmd_report(directory) -> int:
    from . import report  # matplotlib import deferred to the report path

    target = Path(directory)
    try:
        if (target / "metrics.csv").exists():
            written = report.render_run(target)
        elif (target / "sweep.csv").exists():
            written = report.render_sweep(target)
        else:
            raise ConfigError(f"{target}: no metrics.csv or sweep.csv to report on")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}: {exc}")


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtlab",
        description="Multi-task learning lab: adaptive task weighting under label noise",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config")

    p_sweep = sub.add_parser("sweep", help="noise-level x strategy grid of runs")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--noise-levels", type=_float_list, required=True)
    p_sweep.add_argument("--strategies", type=_str_list, required=True)

    p_cmp = sub.add_parser("compare", help="tabulate finished runs")
    p_cmp.add_argument("run_dirs", nargs="+")
    p_cmp.add_argument("--out", default="compare.csv")

    p_rep = sub.add_parser("report", help="render figures for a run or sweep directory")
    p_rep.add_argument("directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.noise_levels, args.strategies)
    if args.command == "compare":
        return cmd_compare(args.run_dirs, args.out)
    return cmd_report(args.directory)


def entrypoint() -> None:  # console script
    sys.exit(main())
