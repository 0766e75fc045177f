import csv
import json
from pathlib import Path

import pytest

from mtlab.cli import cell_seed, main


def base_config(out_dir, noise_level=0.6, strategy="excess"):
    return {
        "dataset": {
            "kind": "synthetic_classification",
            "num_tasks": 2,
            "classes": 3,
            "dim": 8,
            "n": 150,
            "separation": 4.0,
            "seed": 11,
        },
        "model": {"trunk_layers": [8]},
        "noise": [
            {"task_id": 1, "kind": "symmetric_flip", "level": noise_level, "seed": 5}
        ],
        "train": {
            "strategy": strategy,
            "eta_theta": 0.05,
            "eta_alpha": 0.5,
            "epochs": 3,
            "batch_size": 32,
            "warmup_epochs": 1,
            "seed": 3,
        },
        "output": {"directory": str(out_dir)},
    }


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config, indent=2))
    return path


class TestRun:
    def test_missing_config_exits_2_naming_path(self, tmp_path, capsys):
        rc = main(["run", str(tmp_path / "nope.json")])
        assert rc == 2
        assert "nope.json" in capsys.readouterr().err

    def test_invalid_field_exits_2_naming_field(self, tmp_path, capsys):
        config = base_config(tmp_path / "out")
        del config["train"]["eta_theta"]
        rc = main(["run", str(write_config(tmp_path, config))])
        assert rc == 2
        assert "train.eta_theta" in capsys.readouterr().err

    def test_summary_schema(self, tmp_path):
        out = tmp_path / "out"
        rc = main(["run", str(write_config(tmp_path, base_config(out)))])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["final_test_metrics"]) == 2
        assert sum(summary["final_alpha"]) == pytest.approx(1.0, abs=1e-9)
        assert (out / "metrics.csv").exists()
        assert (out / "metrics.jsonl").exists()
        assert (out / "resolved_config.json").exists()

    def test_rerun_byte_identical(self, tmp_path):
        out = tmp_path / "out"
        config_path = write_config(tmp_path, base_config(out))
        assert main(["run", str(config_path)]) == 0
        first = (out / "metrics.csv").read_bytes()
        assert main(["run", str(config_path)]) == 0
        assert (out / "metrics.csv").read_bytes() == first

    def test_resolved_config_reproduces_run(self, tmp_path):
        out = tmp_path / "a"
        assert main(["run", str(write_config(tmp_path, base_config(out)))]) == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        metrics = (out / "metrics.csv").read_bytes()
        resolved["output"]["directory"] = str(tmp_path / "b")
        again = write_config(tmp_path, resolved, name="resolved.json")
        assert main(["run", str(again)]) == 0
        assert (tmp_path / "b" / "metrics.csv").read_bytes() == metrics
        # the echo with the directory restored matches the original echo
        echoed = json.loads((tmp_path / "b" / "resolved_config.json").read_text())
        echoed["output"]["directory"] = str(out)
        assert echoed == json.loads((out / "resolved_config.json").read_text())

    def test_output_root_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MTLAB_OUTPUT_ROOT", str(tmp_path / "root"))
        config = base_config(Path("relative_run"))
        assert main(["run", str(write_config(tmp_path, config))]) == 0
        assert (tmp_path / "root" / "relative_run" / "metrics.csv").exists()


class TestRunAborts:
    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_numeric_divergence_exits_3(self, tmp_path, capsys):
        config = {
            "dataset": {"kind": "synthetic_regression", "num_tasks": 2,
                        "dim": 8, "n": 200, "noise_std": 0.1, "seed": 11},
            "model": {"trunk_layers": [8]},
            "train": {"strategy": "uniform", "eta_theta": 1e6, "eta_alpha": 0.5,
                      "epochs": 2, "batch_size": 32, "warmup_epochs": 0, "seed": 3},
            "output": {"directory": str(tmp_path / "out")},
        }
        rc = main(["run", str(write_config(tmp_path, config))])
        assert rc == 3
        err = capsys.readouterr().err
        assert "task" in err and "step" in err


class TestMultimnistConfig:
    def test_idx_files_drive_a_run(self, tmp_path):
        import numpy as np
        from mtlab.data import write_idx

        rng = np.random.default_rng(0)
        for split, count in (("train", 60), ("test", 30)):
            write_idx(tmp_path / f"{split}-images.idx",
                      rng.integers(0, 256, size=(count, 28, 28), dtype=np.uint8))
            write_idx(tmp_path / f"{split}-labels.idx",
                      rng.integers(0, 10, size=count, dtype=np.uint8))
        out = tmp_path / "out"
        config = {
            "dataset": {
                "kind": "multimnist",
                "train_images": str(tmp_path / "train-images.idx"),
                "train_labels": str(tmp_path / "train-labels.idx"),
                "test_images": str(tmp_path / "test-images.idx"),
                "test_labels": str(tmp_path / "test-labels.idx"),
                "n_train_pairs": 50,
                "n_test_pairs": 20,
                "seed": 4,
            },
            "model": {"trunk_layers": [16]},
            "noise": [{"task_id": 1, "kind": "symmetric_flip", "level": 0.5, "seed": 2}],
            "train": {"strategy": "excess", "eta_theta": 0.05, "eta_alpha": 0.5,
                      "epochs": 2, "batch_size": 25, "warmup_epochs": 1, "seed": 6},
            "output": {"directory": str(out)},
        }
        assert main(["run", str(write_config(tmp_path, config))]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["num_tasks"] == 2
        assert summary["metric_kinds"] == ["accuracy", "accuracy"]


class TestSweep:
    def read_rows(self, sweep_dir):
        with open(sweep_dir / "sweep.csv", newline="") as fh:
            return list(csv.DictReader(fh))

    def test_single_cell(self, tmp_path):
        out = tmp_path / "sweep"
        config_path = write_config(tmp_path, base_config(out))
        rc = main(["sweep", str(config_path), "--noise-levels", "0.5",
                   "--strategies", "uniform"])
        assert rc == 0
        rows = self.read_rows(out)
        assert len(rows) == 1
        assert rows[0]["strategy"] == "uniform"
        assert float(rows[0]["noise_level"]) == 0.5

    def test_grid_row_count(self, tmp_path):
        out = tmp_path / "sweep"
        config_path = write_config(tmp_path, base_config(out))
        rc = main(["sweep", str(config_path), "--noise-levels", "0,0.4",
                   "--strategies", "uniform,excess"])
        assert rc == 0
        rows = self.read_rows(out)
        assert len(rows) == 4
        assert {(r["strategy"], r["noise_level"]) for r in rows} == {
            ("uniform", "0.0"), ("uniform", "0.4"),
            ("excess", "0.0"), ("excess", "0.4"),
        }

    def test_cell_matches_direct_run_of_its_resolved_config(self, tmp_path):
        out = tmp_path / "sweep"
        config_path = write_config(tmp_path, base_config(out))
        assert main(["sweep", str(config_path), "--noise-levels", "0",
                     "--strategies", "uniform"]) == 0
        cell_dir = out / "cells" / "uniform_l0"
        cell_summary = json.loads((cell_dir / "summary.json").read_text())
        resolved = json.loads((cell_dir / "resolved_config.json").read_text())
        resolved["output"]["directory"] = str(tmp_path / "direct")
        assert main(["run", str(write_config(tmp_path, resolved, "cell.json"))]) == 0
        direct = json.loads((tmp_path / "direct" / "summary.json").read_text())
        assert direct == cell_summary

    def test_derived_seeds_are_stable(self):
        assert cell_seed(3, "excess", 0.4) == cell_seed(3, "excess", 0.4)
        assert cell_seed(3, "excess", 0.4) != cell_seed(3, "uniform", 0.4)
        assert cell_seed(3, "excess", 0.4) != cell_seed(3, "excess", 0.8)

    def test_failed_cells_recorded_and_sweep_continues(self, tmp_path, monkeypatch):
        from mtlab import config as config_mod
        from mtlab.errors import NumericsError

        real_execute = config_mod.execute

        def flaky_execute(resolved):
            if resolved["train"]["strategy"] == "groupdro":
                raise NumericsError("synthetic cell failure")
            return real_execute(resolved)

        monkeypatch.setattr(config_mod, "execute", flaky_execute)
        out = tmp_path / "sweep"
        config_path = write_config(tmp_path, base_config(out))
        rc = main(["sweep", str(config_path), "--noise-levels", "0.5",
                   "--strategies", "uniform,groupdro"])
        assert rc == 0
        rows = self.read_rows(out)
        assert [r["strategy"] for r in rows] == ["uniform"]
        failures = json.loads((out / "failures.json").read_text())
        assert failures == [{"strategy": "groupdro", "noise_level": 0.5,
                             "error": "synthetic cell failure"}]

    def test_requires_noise_block(self, tmp_path, capsys):
        config = base_config(tmp_path / "out")
        config["noise"] = []
        rc = main(["sweep", str(write_config(tmp_path, config)),
                   "--noise-levels", "0.5", "--strategies", "uniform"])
        assert rc == 2
        assert "noise" in capsys.readouterr().err


class TestCompare:
    def test_table_and_pareto_flag(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        for name, losses in (("good", [0.1, 0.2]), ("bad", [0.3, 0.4])):
            run_dir = tmp_path / name
            run_dir.mkdir()
            (run_dir / "summary.json").write_text(json.dumps({
                "num_tasks": 2,
                "final_test_metrics": [0.9, 0.8],
                "final_alpha": [0.6, 0.4],
                "final_train_losses": losses,
            }))
        rc = main(["compare", str(tmp_path / "good"), str(tmp_path / "bad")])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "good" in printed and "bad" in printed
        with open(tmp_path / "compare.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        by_run = {r["run"]: r for r in rows}
        assert by_run["bad"]["pareto_dominated_by"] == "good"
        assert by_run["good"]["pareto_dominated_by"] == "-"

    def test_malformed_summary_exits_2(self, tmp_path, capsys):
        run_dir = tmp_path / "broken"
        run_dir.mkdir()
        (run_dir / "summary.json").write_text("{not json")
        assert main(["compare", str(run_dir)]) == 2


class TestReport:
    def test_run_figures(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(write_config(tmp_path, base_config(out)))]) == 0
        assert main(["report", str(out)]) == 0
        for name in ("weights.png", "train_loss.png", "test_metric.png",
                     "stationarity.png", "excess.png"):
            assert (out / name).exists(), name

    def test_sweep_figures(self, tmp_path):
        out = tmp_path / "sweep"
        config_path = write_config(tmp_path, base_config(out))
        assert main(["sweep", str(config_path), "--noise-levels", "0,0.6",
                     "--strategies", "uniform,excess"]) == 0
        assert main(["report", str(out)]) == 0
        for name in ("clean_metric.png", "noisy_metric.png", "clean_weights.png"):
            assert (out / name).exists(), name

    def test_directory_without_tables_exits_2(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 2
