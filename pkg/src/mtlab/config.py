"""Experiment configuration: schema validation, resolution, and execution.

Config files are JSON with four blocks (dataset, model, train, output) plus an
optional noise list. Scientific parameters (step sizes, seeds, epochs, batch
size, strategy) must be stated explicitly; only presentation-level fields have
defaults. resolve_config materializes every default so the resolved copy
written into a run directory reproduces the run byte for byte.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import noise as noise_mod
from . import trainer as trainer_mod
from .errors import ConfigError
from .model import LossKind, ModelSpec
from .noise import NoiseKind, NoiseSpec
from .numcore import ParamPartition
from .trainer import MetricsRecord, TrainConfig
from .weighting import StrategyKind

STRATEGY_NAMES = {k.value: k for k in StrategyKind}
NOISE_NAMES = {k.value: k for k in NoiseKind}
DATASET_KINDS = ("synthetic_classification", "synthetic_regression", "multimnist")


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return raw


def _block(raw: dict, name: str, required: bool = True) -> dict:
    value = raw.get(name)
    if value is None:
        if required:
            raise ConfigError(f"{name}: block is required")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: must be an object")
    return dict(value)


def _field(block: dict, path: str, key: str, kinds, required=True, default=None):
    if key not in block:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return default
    value = block[key]
    if kinds is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kinds) or isinstance(value, bool) and kinds is not bool:
        raise ConfigError(f"{path}.{key}: expected {getattr(kinds, '__name__', kinds)}")
    return value


def _positive(value, path: str):
    if value <= 0:
        raise ConfigError(f"{path}: must be > 0")
    return value


def resolve_config(raw: dict) -> dict:
    """Validate and return a fully materialized copy of the configuration."""
    known = {"dataset", "model", "noise", "train", "output"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level block")

    dataset = _block(raw, "dataset")
    kind = _field(dataset, "dataset", "kind", str)
    if kind not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind: unknown kind {kind!r}")
    resolved_ds: dict = {"kind": kind}
    if kind == "synthetic_classification":
        for key in ("num_tasks", "classes", "dim", "n"):
            resolved_ds[key] = _positive(_field(dataset, "dataset", key, int), f"dataset.{key}")
        resolved_ds["seed"] = _field(dataset, "dataset", "seed", int)
        resolved_ds["separation"] = _positive(
            _field(dataset, "dataset", "separation", float), "dataset.separation"
        )
        if resolved_ds["num_tasks"] < 2:
            raise ConfigError("dataset.num_tasks: need at least 2 tasks")
        if resolved_ds["classes"] < 2:
            raise ConfigError("dataset.classes: need at least 2 classes")
    elif kind == "synthetic_regression":
        for key in ("num_tasks", "dim", "n"):
            resolved_ds[key] = _positive(_field(dataset, "dataset", key, int), f"dataset.{key}")
        resolved_ds["seed"] = _field(dataset, "dataset", "seed", int)
        noise_std = _field(dataset, "dataset", "noise_std", float)
        if noise_std < 0:
            raise ConfigError("dataset.noise_std: must be >= 0")
        resolved_ds["noise_std"] = noise_std
        resolved_ds["weight_scale"] = _field(
            dataset, "dataset", "weight_scale", float, required=False, default=1.0
        )
        if resolved_ds["num_tasks"] < 2:
            raise ConfigError("dataset.num_tasks: need at least 2 tasks")
    else:  # multimnist
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            resolved_ds[key] = _field(dataset, "dataset", key, str)
        for key in ("n_train_pairs", "n_test_pairs"):
            resolved_ds[key] = _positive(_field(dataset, "dataset", key, int), f"dataset.{key}")
        resolved_ds["seed"] = _field(dataset, "dataset", "seed", int)
        resolved_ds["canvas"] = _field(dataset, "dataset", "canvas", int, required=False, default=36)
        if resolved_ds["canvas"] < 28:
            raise ConfigError("dataset.canvas: must be >= 28")
    resolved_ds["standardize"] = _field(
        dataset, "dataset", "standardize", bool, required=False, default=True
    )

    model = _block(raw, "model")
    trunk = _field(model, "model", "trunk_layers", list)
    if not trunk or not all(isinstance(w, int) and w >= 1 for w in trunk):
        raise ConfigError("model.trunk_layers: need a list of widths >= 1")
    resolved_model = {"trunk_layers": list(trunk), "activation": "relu"}

    noise_raw = raw.get("noise", [])
    if not isinstance(noise_raw, list):
        raise ConfigError("noise: must be a list of specs")
    resolved_noise = []
    for idx, item in enumerate(noise_raw):
        if not isinstance(item, dict):
            raise ConfigError(f"noise[{idx}]: must be an object")
        path = f"noise[{idx}]"
        nkind = _field(item, path, "kind", str)
        if nkind not in NOISE_NAMES:
            raise ConfigError(f"{path}.kind: unknown kind {nkind!r}")
        level = _field(item, path, "level", float)
        if not 0.0 <= level <= 1.0:
            raise ConfigError(f"{path}.level: must be in [0, 1]")
        resolved_noise.append(
            {
                "task_id": _field(item, path, "task_id", int),
                "kind": nkind,
                "level": level,
                "seed": _field(item, path, "seed", int),
            }
        )

    train = _block(raw, "train")
    strategy = _field(train, "train", "strategy", str)
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(
            f"train.strategy: unknown strategy {strategy!r}"
            f" (choose from {sorted(STRATEGY_NAMES)})"
        )
    resolved_train = {
        "strategy": strategy,
        "eta_theta": _positive(_field(train, "train", "eta_theta", float), "train.eta_theta"),
        "eta_alpha": _positive(_field(train, "train", "eta_alpha", float), "train.eta_alpha"),
        "epochs": _field(train, "train", "epochs", int),
        "batch_size": _positive(_field(train, "train", "batch_size", int), "train.batch_size"),
        "seed": _field(train, "train", "seed", int),
        "warmup_epochs": _field(train, "train", "warmup_epochs", int, required=False, default=3),
        "weight_decay": _field(train, "train", "weight_decay", float, required=False, default=0.0),
        "eta_decay": _field(train, "train", "eta_decay", bool, required=False, default=False),
        "normalize_excess": _field(
            train, "train", "normalize_excess", bool, required=False, default=True
        ),
    }
    if resolved_train["epochs"] < 0:
        raise ConfigError("train.epochs: must be >= 0")
    if resolved_train["weight_decay"] < 0:
        raise ConfigError("train.weight_decay: must be >= 0")
    if resolved_train["epochs"] > 0 and resolved_train["warmup_epochs"] >= resolved_train["epochs"]:
        raise ConfigError("train.warmup_epochs: must be < train.epochs")

    output = _block(raw, "output")
    directory = _field(output, "output", "directory", str)
    formats = _field(output, "output", "formats", list, required=False, default=["csv", "jsonl"])
    for fmt in formats:
        if fmt not in ("csv", "jsonl"):
            raise ConfigError(f"output.formats: unknown format {fmt!r}")
    resolved_output = {"directory": directory, "formats": list(formats)}

    resolved = {
        "dataset": resolved_ds,
        "model": resolved_model,
        "noise": resolved_noise,
        "train": resolved_train,
        "output": resolved_output,
    }
    _check_task_references(resolved)
    return resolved


def _num_tasks(resolved: dict) -> int:
    ds = resolved["dataset"]
    return 2 if ds["kind"] == "multimnist" else ds["num_tasks"]


def _check_task_references(resolved: dict) -> None:
    m = _num_tasks(resolved)
    ds_kind = resolved["dataset"]["kind"]
    for idx, spec in enumerate(resolved["noise"]):
        if not 0 <= spec["task_id"] < m:
            raise ConfigError(f"noise[{idx}].task_id: task {spec['task_id']} does not exist")
        classif = ds_kind in ("synthetic_classification", "multimnist")
        if classif and spec["kind"] != NoiseKind.SYMMETRIC_FLIP.value:
            raise ConfigError(f"noise[{idx}].kind: classification tasks take symmetric_flip")
        if not classif and spec["kind"] != NoiseKind.ADDITIVE_GAUSSIAN.value:
            raise ConfigError(f"noise[{idx}].kind: regression tasks take additive_gaussian")


def build_datasets(resolved: dict) -> tuple[list[data_mod.TaskData], ModelSpec, list[str]]:
    """Materialize datasets and the model spec implied by the dataset block."""
    ds = resolved["dataset"]
    trunk = resolved["model"]["trunk_layers"]
    if ds["kind"] == "synthetic_classification":
        datasets = data_mod.gen_synthetic_classification(
            ds["num_tasks"], ds["classes"], ds["dim"], ds["n"], ds["separation"], ds["seed"]
        )
        heads = [(ds["classes"], LossKind.SOFTMAX_CROSS_ENTROPY)] * ds["num_tasks"]
        metrics = ["accuracy"] * ds["num_tasks"]
        input_dim = ds["dim"]
    elif ds["kind"] == "synthetic_regression":
        datasets = data_mod.gen_synthetic_regression(
            ds["num_tasks"], ds["dim"], ds["n"], ds["noise_std"], ds["seed"],
            weight_scale=ds["weight_scale"],
        )
        heads = [(1, LossKind.SQUARED_ERROR)] * ds["num_tasks"]
        metrics = ["mse"] * ds["num_tasks"]
        input_dim = ds["dim"]
    else:
        canvas = ds["canvas"]
        train_images = data_mod.read_idx(ds["train_images"]).astype(np.float64) / 255.0
        train_labels = data_mod.read_idx(ds["train_labels"]).astype(np.int64)
        test_images = data_mod.read_idx(ds["test_images"]).astype(np.float64) / 255.0
        test_labels = data_mod.read_idx(ds["test_labels"]).astype(np.int64)
        tr_a, tr_b = data_mod.compose_multimnist(
            train_images, train_labels, train_images, train_labels,
            n_pairs=ds["n_train_pairs"], canvas=canvas, seed=ds["seed"],
            split=data_mod.Split.TRAIN,
        )
        te_a, te_b = data_mod.compose_multimnist(
            test_images, test_labels, test_images, test_labels,
            n_pairs=ds["n_test_pairs"], canvas=canvas, seed=ds["seed"] + 1,
            split=data_mod.Split.TEST,
        )
        datasets = [data_mod.TaskData(tr_a, te_a), data_mod.TaskData(tr_b, te_b)]
        heads = [(10, LossKind.SOFTMAX_CROSS_ENTROPY)] * 2
        metrics = ["accuracy"] * 2
        input_dim = canvas * canvas
    spec = ModelSpec(input_dim, tuple(trunk), tuple(heads))
    return datasets, spec, metrics


def build_noise_specs(resolved: dict) -> list[NoiseSpec]:
    return [
        NoiseSpec(s["task_id"], NOISE_NAMES[s["kind"]], s["level"], s["seed"])
        for s in resolved["noise"]
    ]


def build_train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    return TrainConfig(
        eta_theta=t["eta_theta"],
        eta_alpha=t["eta_alpha"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        strategy=STRATEGY_NAMES[t["strategy"]],
        warmup_epochs=t["warmup_epochs"],
        weight_decay=t["weight_decay"],
        seed=t["seed"],
        eta_decay=t["eta_decay"],
        normalize_excess=t["normalize_excess"],
    )


@dataclass
class RunResult:
    resolved: dict
    records: list[MetricsRecord]
    summary: dict
    partition: ParamPartition


def execute(resolved: dict) -> RunResult:
    """Build the problem, run fit, and summarize final metrics."""
    datasets, spec, metric_kinds = build_datasets(resolved)
    if resolved["dataset"]["standardize"]:
        datasets = [data_mod.standardize_task(td)[0] for td in datasets]
    num_classes = None
    if resolved["dataset"]["kind"] == "synthetic_classification":
        num_classes = resolved["dataset"]["classes"]
    elif resolved["dataset"]["kind"] == "multimnist":
        num_classes = 10
    datasets = noise_mod.apply_noise(datasets, build_noise_specs(resolved), num_classes)

    cfg = build_train_config(resolved)
    partition, records = trainer_mod.fit(datasets, spec, cfg)

    m = spec.num_tasks
    final_metrics = (
        records[-1].per_task_test_metric
        if records
        else trainer_mod.evaluate(partition, spec, datasets)
    )
    final_alpha = records[-1].alpha if records else [1.0 / m] * m
    summary = {
        "num_tasks": m,
        "strategy": resolved["train"]["strategy"],
        "steps": len(records),
        "metric_kinds": metric_kinds,
        "final_test_metrics": [float(v) for v in final_metrics],
        "final_alpha": [float(v) for v in final_alpha],
        "final_train_losses": (
            [float(v) for v in records[-1].per_task_train_loss] if records else None
        ),
        "noisy_tasks": sorted({s["task_id"] for s in resolved["noise"] if s["level"] > 0}),
    }
    return RunResult(resolved, records, summary, partition)


def metrics_columns(m: int) -> list[str]:
    cols = ["step"]
    for name in ("train_loss", "test_metric", "raw_excess", "relative_excess"):
        cols += [f"{name}_{i}" for i in range(m)]
    cols += [f"alpha_{i}" for i in range(m)]
    cols.append("stationarity_gap")
    return cols


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_metrics_csv(path, records: list[MetricsRecord], m: int) -> None:
    """Stable column order: step, per-task blocks, alpha block, gap."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_columns(m))
        for rec in records:
            row = [str(rec.step)]
            row += [_fmt(v) for v in rec.per_task_train_loss]
            row += [_fmt(v) for v in rec.per_task_test_metric]
            raw = rec.raw_excess if rec.raw_excess is not None else [None] * m
            rel = rec.relative_excess if rec.relative_excess is not None else [None] * m
            row += [_fmt(v) for v in raw]
            row += [_fmt(v) for v in rel]
            row += [_fmt(v) for v in rec.alpha]
            row.append(_fmt(rec.stationarity_gap))
            writer.writerow(row)


def write_metrics_jsonl(path, records: list[MetricsRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def write_run_outputs(run_dir, result: RunResult) -> None:
    """metrics.csv / metrics.jsonl, summary.json and the resolved config echo."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    m = result.summary["num_tasks"]
    formats = result.resolved["output"]["formats"]
    if "csv" in formats:
        write_metrics_csv(run_dir / "metrics.csv", result.records, m)
    if "jsonl" in formats:
        write_metrics_jsonl(run_dir / "metrics.jsonl", result.records)
    (run_dir / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True) + "\n"
    )
    (run_dir / "resolved_config.json").write_text(
        json.dumps(result.resolved, indent=2, sort_keys=True) + "\n"
    )
