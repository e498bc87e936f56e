import json
import math

import pytest

from convflat.cli import main
from convflat.core.config import settings
from convflat.core.constants import (
    BENCH_CSV_COLUMNS,
    RUN_CSV_COLUMNS,
    STOP_COMPARE_CSV_COLUMNS,
    SWEEP_CSV_COLUMNS,
)
from convflat.schemas.records import CorrelationStats, EnvelopeCalibration
from convflat.services.report_writer import read_csv

# --- Fixtures ---

TINY_EXPERIMENT = {
    "dataset": {"class_count": 3, "samples_per_class": 10, "height": 6, "width": 6, "seed": 3},
    "backbone": {"channels": 4, "ksize": 3},
    "optimizer": {"lr": 0.05, "batch_size": 8, "epochs": 4},
    "early_stopping": {"kind": "none"},
}


@pytest.fixture
def write_config(tmp_path):
    """Writes a JSON config document and returns its path as a string."""

    def _write(payload: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def sweep_config(write_config):
    """Provides a 2 x 2 x 3 sweep over the tiny experiment."""
    grid = {
        "optimizers": ["sgd_momentum", "adamw"],
        "learning_rates": [0.01, 0.05],
        "batch_sizes": [8],
        "seeds": [0, 1, 2],
    }
    return write_config({**TINY_EXPERIMENT, "grid": grid}, "sweep.json")


def bench_args(output, *extra):
    return [
        "bench",
        "--batches", "3",
        "--kernels", "5",
        "--runs", "2",
        "--probes", "32",
        "--seed", "7",
        "--no-timing",
        "--output", str(output),
        *extra,
    ]  # fmt: skip


# --- Test Cases ---


def test_bench_is_byte_identical_across_invocations(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(bench_args(first, "--jobs", "1")) == 0
    assert main(bench_args(second, "--jobs", "1")) == 0

    assert first.read_bytes() == second.read_bytes()
    assert first.read_text(encoding="utf-8").splitlines()[0] == ",".join(BENCH_CSV_COLUMNS)


def test_bench_output_does_not_depend_on_jobs(tmp_path):
    serial, pooled = tmp_path / "serial.csv", tmp_path / "pooled.csv"
    assert main(bench_args(serial, "--jobs", "1")) == 0
    assert main(bench_args(pooled, "--jobs", "2")) == 0
    assert serial.read_bytes() == pooled.read_bytes()


def test_seed_falls_back_to_environment_setting(tmp_path, monkeypatch):
    explicit, from_env = tmp_path / "explicit.csv", tmp_path / "env.csv"
    assert main(bench_args(explicit, "--jobs", "1")) == 0

    monkeypatch.setattr(settings, "SEED", 7)
    args = bench_args(from_env, "--jobs", "1")
    seed_at = args.index("--seed")
    del args[seed_at : seed_at + 2]
    assert main(args) == 0
    assert explicit.read_bytes() == from_env.read_bytes()


def test_bench_symbolic_agrees_with_finite_differences(tmp_path, capsys):
    output = tmp_path / "bench.csv"
    code = main(
        [
            "bench",
            "--batches", "5",
            "--kernels", "10",
            "--weights", "ones",
            "--runs", "2",
            "--probes", "32",
            "--jobs", "1",
            "--no-timing",
            "--output", str(output),
        ]  # fmt: skip
    )
    assert code == 0

    rows = {row["method"]: row for row in read_csv(output)}
    assert float(rows["symbolic"]["abs_err_mean"]) < 1e-4
    assert rows["finite_diff"]["abs_err_mean"] == ""
    assert "symbolic" in capsys.readouterr().out


def test_bench_grid_writes_one_block_per_combination(tmp_path):
    output = tmp_path / "grid.csv"
    args = bench_args(output, "--jobs", "1", "--no-fd")
    args[args.index("--kernels") + 1 : args.index("--kernels") + 2] = ["2", "4"]
    assert main(args) == 0

    rows = read_csv(output)
    assert len(rows) == 2 * 4
    assert [r["kernels"] for r in rows[::4]] == ["2", "4"]
    assert all(r["trace_mean"] == "" for r in rows if r["method"] == "finite_diff")


@pytest.mark.parametrize(
    "argv",
    [
        ["bench", "--kernels", "0"],
        ["bench", "--weights", "gaussian"],
        ["bound", "--kappa", "1.0"],
        ["nonsense"],
    ],
)
def test_usage_errors_exit_with_two(argv):
    assert main(argv) == 2


def test_bench_kernel_larger_than_input_is_a_usage_error(tmp_path):
    output = tmp_path / "bench.csv"
    assert main(["bench", "--hw", "2", "--ksize", "3", "--output", str(output)]) == 2
    assert not output.exists()


def test_help_lists_defaults(capsys):
    assert main(["bench", "--help"]) == 0
    text = " ".join(capsys.readouterr().out.split())
    assert "--runs RUNS independent runs (default: 30)" in text
    assert "--probes PROBES Hutchinson probes (default: 500)" in text
    assert "--no-timing" in text


def test_train_writes_epoch_records(tmp_path, write_config):
    config = write_config(TINY_EXPERIMENT)
    first, second = tmp_path / "run1.csv", tmp_path / "run2.csv"
    assert main(["train", "--config", config, "--output", str(first), "--no-timing"]) == 0
    assert main(["train", "--config", config, "--output", str(second), "--no-timing"]) == 0

    assert first.read_bytes() == second.read_bytes()
    rows = read_csv(first)
    assert tuple(rows[0]) == RUN_CSV_COLUMNS
    assert [r["epoch"] for r in rows] == ["1", "2", "3", "4"]
    assert rows[-1]["stop_reason"] == "max_epochs"
    assert all(r["time_s"] == "0" for r in rows)


def test_train_seed_flag_changes_the_run(tmp_path, write_config):
    config = write_config(TINY_EXPERIMENT)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["train", "--config", config, "--no-timing"]
    assert main([*base, "--output", str(a), "--seed", "1"]) == 0
    assert main([*base, "--output", str(b), "--seed", "2"]) == 0
    assert a.read_bytes() != b.read_bytes()
    assert {r["seed"] for r in read_csv(a)} == {"1"}


def test_unknown_config_field_is_a_usage_error(tmp_path, write_config, capsys):
    config = write_config({**TINY_EXPERIMENT, "learning_rate": 0.1})
    output = tmp_path / "run.csv"
    assert main(["train", "--config", config, "--output", str(output)]) == 2
    assert "Invalid config" in capsys.readouterr().err
    assert not output.exists()


def test_missing_config_is_a_usage_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 2


def test_sweep_then_correlate_round_trip(tmp_path, sweep_config):
    sweep_csv, stats_json = tmp_path / "sweep.csv", tmp_path / "stats.json"
    argv = ["sweep", "--config", sweep_config, "--output", str(sweep_csv), "--jobs", "1"]
    assert main([*argv, "--no-timing"]) == 0

    rows = read_csv(sweep_csv)
    assert len(rows) == 12
    assert tuple(rows[0]) == SWEEP_CSV_COLUMNS

    assert main(["correlate", "--input", str(sweep_csv), "--output", str(stats_json)]) == 0
    stats = CorrelationStats.model_validate_json(stats_json.read_text(encoding="utf-8"))
    assert stats.n == 12
    assert -1.0 <= stats.spearman_rho <= 1.0


def test_sweep_output_does_not_depend_on_jobs(tmp_path, sweep_config):
    serial, pooled = tmp_path / "serial.csv", tmp_path / "pooled.csv"
    base = ["sweep", "--config", sweep_config, "--no-timing"]
    assert main([*base, "--output", str(serial), "--jobs", "1"]) == 0
    assert main([*base, "--output", str(pooled), "--jobs", "2"]) == 0
    assert serial.read_bytes() == pooled.read_bytes()


def test_correlate_constant_column_fails_at_runtime(tmp_path):
    table = tmp_path / "flat.csv"
    table.write_text("flatness,gen_gap\n1.0,0.1\n1.0,0.2\n1.0,0.3\n", encoding="utf-8")
    output = tmp_path / "stats.json"
    assert main(["correlate", "--input", str(table), "--output", str(output)]) == 1
    assert not output.exists()


def test_bound_prints_envelope(capsys):
    argv = ["bound", "--kappa", "8", "--samples", "100", "--m", "4"]
    assert main([*argv, "--c1", "1", "--c2", "1", "--delta", "0.25"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == pytest.approx(4.0 / math.sqrt(10.0), abs=1e-12)


def test_bound_derives_sample_size_from_config(capsys, write_config):
    config = write_config(TINY_EXPERIMENT)
    assert main(["bound", "--kappa", "0", "--config", config]) == 0
    assert float(capsys.readouterr().out.strip()) == 0.0


def test_bound_out_of_domain_is_a_runtime_failure():
    argv = ["bound", "--kappa", "1", "--samples", "100", "--m", "4", "--delta", "1.5"]
    assert main(argv) == 1


def test_bound_calibration_from_sweep(tmp_path, sweep_config):
    sweep_csv, calibration = tmp_path / "sweep.csv", tmp_path / "calibration.json"
    argv = ["sweep", "--config", sweep_config, "--output", str(sweep_csv), "--jobs", "1"]
    assert main([*argv, "--no-timing"]) == 0

    argv = ["bound", "--calibrate-from", str(sweep_csv), "--config", sweep_config]
    assert main([*argv, "--output", str(calibration), "--seed", "3"]) == 0

    result = EnvelopeCalibration.model_validate_json(calibration.read_text(encoding="utf-8"))
    assert result.c2 == 0.0
    assert result.c1 >= 0.0
    assert result.calibration_size + result.holdout_size == 12
    assert result.sample_size == 15


def test_stop_compare_writes_one_row_per_strategy(tmp_path, write_config):
    config = write_config(
        {
            **TINY_EXPERIMENT,
            "early_stopping": {"patience": 1, "threshold": 0.5, "max_epochs": 4},
            "seeds": [0, 1],
        }
    )
    output = tmp_path / "stop.csv"
    argv = ["stop-compare", "--config", config, "--output", str(output), "--jobs", "1"]
    assert main([*argv, "--no-timing"]) == 0

    rows = read_csv(output)
    assert tuple(rows[0]) == STOP_COMPARE_CSV_COLUMNS
    assert [r["strategy"] for r in rows] == ["standard", "flatness", "combined"]


@pytest.mark.parametrize("command", ["bench", "train"])
def test_help_explains_wall_clock_timing(command, capsys):
    assert main([command, "--help"]) == 0
    text = " ".join(capsys.readouterr().out.split())
    assert "timing columns are recorded unless CONVFLAT_RECORD_TIMING=false" in text
    assert "this flag writes 0.0 into them" in text
