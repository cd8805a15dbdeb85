#!/usr/bin/env python3
"""
End-to-end tests for the schedloc command line: configuration handling,
the simulate -> calibrate -> localize pipeline, exit codes and reproduce
"""

import json
import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

import numpy as np
import pytest

from schedloc.action.common import (
    MonteCarloResult,
    group_fixes,
    listener_hcrb,
    run_map_monte_carlo,
    schedule_matrices,
)
from schedloc.action.reproduce import bound_checks, calibration_benefit
from schedloc.calibration import CalibratedBatch, calibrate_stream
from schedloc.common import (
    read_calibrated_csv,
    read_json,
    read_matrix_csv,
    read_measurements_csv,
)
from schedloc.config import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_SUCCESS,
    MEASUREMENT_CSV_COLUMNS,
    NS,
)
from schedloc.entry import schedloc
from schedloc.estimation import ellipse_from_samples, error_ellipse
from schedloc.experiment import config_from_dict, load_experiment_config
from schedloc.models import ConfigError, DataError
from schedloc.parser import parse_arguments
from schedloc.simkit import simulate_batches

SMALL_RUN = {"n_batches": 100, "rng_seed": 3, "estimation": {"batches_per_fix": 25}}


def _write_config(directory, data=None):
    path = directory / "experiment.json"
    path.write_text(json.dumps(SMALL_RUN if data is None else data), encoding="UTF-8")
    return str(path)


def _run(config_path, out, *command):
    return schedloc(["-q", "-c", config_path, "-o", str(out), *command])


#########################################################################################
# Configuration
#########################################################################################


def test_presets_load():
    default = load_experiment_config()
    assert default.schedule.order == (1, 2, 3, 2, 1, 3, 1)
    assert abs(default.estimation.sigma - 3 * NS) < 1e-21
    assert np.all(np.abs(default.clocks.relative_skews) <= 10e-6)

    fig6 = load_experiment_config(preset="fig6")
    assert not fig6.calibration.rls
    assert np.all(fig6.clocks.relative_skews == 0)

    with pytest.raises(ConfigError, match="unknown preset"):
        load_experiment_config(preset="fig5")


def test_seed_override_redraws_random_skews():
    first = load_experiment_config(seed=1)
    second = load_experiment_config(seed=2)
    assert first.rng_seed == 1
    assert not np.array_equal(first.clocks.relative_skews, second.clocks.relative_skews)
    assert np.array_equal(
        first.clocks.relative_skews, load_experiment_config(seed=1).clocks.relative_skews
    )


@pytest.mark.parametrize(
    "data, message",
    [
        ({"colour": 1}, "unknown keys"),
        ({"clocks": {"jitter": 1.0}}, "unknown keys in clocks"),
        ({"clocks": {"jitter_ns": -1.0}}, "clocks.jitter_ns"),
        ({"n_batches": 0}, "n_batches"),
        ({"geometry": {"anchors_m": [[0, 0], [1, 0], [2, 0]]}}, "collinear"),
        ({"geometry": {"anchors_m": [[0, 0], [1, 0]]}}, "N ≥ 3"),
        ({"schedule": {"order": [1, 2, 2, 3]}}, "repeated consecutive sender"),
        ({"schedule": {"order": [1, 2, 1, 2]}}, "never transmit"),
        ({"schedule": {"nominal_delay_ms": 0}}, "nominal_delay_ms"),
        ({"clocks": {"anchor_skews_ppm": [1.0, 2.0]}}, "one skew per anchor"),
        ({"estimation": {"confidence": 1.0}}, "confidence"),
        ({"calibration": {"rls": "yes"}}, "calibration.rls"),
    ],
)
def test_invalid_configuration_names_the_key(data, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(data)


def test_configuration_errors_exit_with_one(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{ not json", encoding="UTF-8")
    assert _run(str(broken), tmp_path / "out", "simulate") == EXIT_CONFIG_ERROR
    assert _run(str(tmp_path / "missing.json"), tmp_path / "out", "simulate") == EXIT_CONFIG_ERROR

    collinear = _write_config(tmp_path, {"geometry": {"anchors_m": [[0, 0], [1, 1], [2, 2]]}})
    assert _run(collinear, tmp_path / "out", "simulate") == EXIT_CONFIG_ERROR


def test_parser_requires_a_command():
    with pytest.raises(SystemExit) as exit_info:
        parse_arguments([])
    assert exit_info.value.code == EXIT_CONFIG_ERROR

    with pytest.raises(SystemExit):
        parse_arguments(["reproduce", "fig5"])

    assert parse_arguments(["reproduce", "FIG2"]).figure == "fig2"
    assert parse_arguments(["-s", "4", "simulate", "--export-matrices"]).export_matrices


#########################################################################################
# Pipeline
#########################################################################################


def test_simulate_writes_measurements(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "simulate", "--export-matrices") == EXIT_SUCCESS

    lines = (out / "measurements.csv").read_text(encoding="UTF-8").splitlines()
    assert lines[0] == ",".join(MEASUREMENT_CSV_COLUMNS)
    assert len(lines) == 1 + 100 * 6

    truth = json.loads((out / "truth.json").read_text(encoding="UTF-8"))
    assert set(truth) == {"theta_true", "listener_m", "anchors_m", "rng_seed"}
    assert truth["rng_seed"] == 3

    config = load_experiment_config(config_path)
    assert np.array_equal(read_matrix_csv(out / "S.csv"), schedule_matrices(config).S)
    assert read_matrix_csv(out / "G.csv").shape == (3, 3)


def test_simulation_is_reproducible(tmp_path):
    config_path = _write_config(tmp_path)
    assert _run(config_path, tmp_path / "first", "simulate") == EXIT_SUCCESS
    assert _run(config_path, tmp_path / "second", "simulate") == EXIT_SUCCESS
    first = (tmp_path / "first" / "measurements.csv").read_bytes()
    second = (tmp_path / "second" / "measurements.csv").read_bytes()
    assert first == second


def test_measurement_csv_is_bit_exact(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "simulate") == EXIT_SUCCESS

    config = load_experiment_config(config_path)
    expected = simulate_batches(config.to_sim_config())
    parsed = read_measurements_csv(out / "measurements.csv", config.schedule)
    assert len(parsed) == len(expected)
    for one, other in zip(parsed, expected):
        assert one.batch_index == other.batch_index
        assert np.array_equal(one.y, other.y)
        assert np.array_equal(one.delta_actual, other.delta_actual)


def test_simulate_calibrate_localize(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "simulate") == EXIT_SUCCESS
    assert _run(config_path, out, "calibrate", "-i", str(out / "measurements.csv")) == EXIT_SUCCESS

    config = load_experiment_config(config_path)
    batches = read_measurements_csv(out / "measurements.csv", config.schedule)
    result = calibrate_stream(
        batches, schedule_matrices(config), config.geometry.anchor_ranges(), config.calibration
    )
    calibrated = read_calibrated_csv(out / "calibrated.csv", config.schedule)
    assert len(calibrated) == len(result.kept)
    for parsed, expected in zip(calibrated, result.kept):
        assert np.array_equal(parsed.y_cal, expected.y_cal)
        assert np.array_equal(parsed.d_vec, expected.d_vec)

    trace = (out / "rls_trace.csv").read_text(encoding="UTF-8").splitlines()
    assert trace[0] == "n,theta_hat_1,theta_hat_2,theta_hat_3,trace_P"
    assert len(trace) == 1 + 1 + len(result.kept)
    assert (out / "rejected.csv").exists()

    assert _run(config_path, out, "localize", "-i", str(out / "calibrated.csv")) == EXIT_SUCCESS
    estimates = json.loads((out / "estimates.json").read_text(encoding="UTF-8"))
    assert estimates["batches_per_fix"] == 25
    assert len(estimates["fixes"]) == len(result.kept) // 25
    pooled = np.array(estimates["pooled"]["x_hat"])
    assert np.linalg.norm(pooled - config.geometry.listener_true) < 1.0


def test_bound_writes_hcrb(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "bound") == EXIT_SUCCESS
    record = json.loads((out / "hcrb.json").read_text(encoding="UTF-8"))
    assert record["kind"] == "hcrb"
    assert record["batches_per_fix"] == 25
    assert abs(record["sigma_ns"] - 3.0) < 1e-9
    major, minor = record["semi_axes"]
    assert major >= minor > 0


#########################################################################################
# Data errors
#########################################################################################


def test_malformed_csv_names_the_line(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "simulate") == EXIT_SUCCESS

    csv_path = out / "measurements.csv"
    lines = csv_path.read_text(encoding="UTF-8").splitlines()
    cells = lines[2].split(",")
    cells[4] = "abc"
    lines[2] = ",".join(cells)
    csv_path.write_text("\n".join(lines) + "\n", encoding="UTF-8")

    config = load_experiment_config(config_path)
    with pytest.raises(DataError, match=r"measurements\.csv:3: y_seconds"):
        read_measurements_csv(csv_path, config.schedule)
    assert _run(config_path, out, "calibrate", "-i", str(csv_path)) == EXIT_DATA_ERROR


def test_missing_and_truncated_input(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    missing = str(tmp_path / "nothing.csv")
    assert _run(config_path, out, "calibrate", "-i", missing) == EXIT_DATA_ERROR

    assert _run(config_path, out, "simulate") == EXIT_SUCCESS
    csv_path = out / "measurements.csv"
    lines = csv_path.read_text(encoding="UTF-8").splitlines()
    csv_path.write_text("\n".join(lines[:-1]) + "\n", encoding="UTF-8")
    config = load_experiment_config(config_path)
    with pytest.raises(DataError, match="has 5 rows"):
        read_measurements_csv(csv_path, config.schedule)


def test_undecodable_input_is_a_data_error(tmp_path):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "simulate", "--export-matrices") == EXIT_SUCCESS

    for name in ("measurements.csv", "S.csv"):
        path = out / name
        content = bytearray(path.read_bytes())
        content[200:200] = b"\xff\xfe"
        path.write_bytes(bytes(content))

    config = load_experiment_config(config_path)
    with pytest.raises(DataError, match=r"cannot read .*measurements\.csv"):
        read_measurements_csv(out / "measurements.csv", config.schedule)
    with pytest.raises(DataError, match=r"cannot read .*S\.csv"):
        read_matrix_csv(out / "S.csv")
    measurements = str(out / "measurements.csv")
    assert _run(config_path, out, "calibrate", "-i", measurements) == EXIT_DATA_ERROR


def test_corrupt_truth_file_skips_the_comparison(tmp_path, capsys):
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert _run(config_path, out, "simulate") == EXIT_SUCCESS
    (out / "truth.json").write_text("{not json", encoding="UTF-8")

    with pytest.raises(DataError, match="truth.json"):
        read_json(out / "truth.json")
    capsys.readouterr()
    assert _run(config_path, out, "calibrate", "-i", str(out / "measurements.csv")) == EXIT_SUCCESS
    printed = capsys.readouterr().out
    assert "theta_hat" in printed
    assert "error vs truth.json" not in printed
    assert (out / "calibrated.csv").exists()

    (out / "truth.json").write_text("[1, 2, 3]", encoding="UTF-8")
    with pytest.raises(DataError, match="expected a JSON object"):
        read_json(out / "truth.json")
    assert read_json(out / "missing.json") is None


#########################################################################################
# Fixes and Monte Carlo
#########################################################################################


def test_group_fixes_drops_incomplete_tail():
    calibrated = [
        CalibratedBatch(index, np.zeros(6), np.zeros(6)) for index in range(12)
    ] + [CalibratedBatch.rejection(12)]
    groups = group_fixes(calibrated, 5)
    assert [len(group) for group in groups] == [5, 5]
    assert [len(group) for group in group_fixes(calibrated[:3], 5)] == [3]


def test_monte_carlo_scatter_matches_bound():
    config = load_experiment_config(preset="fig6")
    config = replace(config, estimation=replace(config.estimation, batches_per_fix=10))
    result = run_map_monte_carlo(config, n_runs=40)
    hcrb = error_ellipse(listener_hcrb(config), config.geometry.listener_true)

    assert len(result.estimates) == 40
    assert result.converged.all()
    assert result.bias < 0.3
    assert 0.5 < result.ellipse.area / hcrb.area < 2.0


def test_reproduce_fig2(tmp_path):
    out = tmp_path / "out"
    assert schedloc(["-q", "-o", str(out), "reproduce", "FIG2"]) == EXIT_SUCCESS
    report = (out / "fig2" / "report.txt").read_text(encoding="UTF-8").splitlines()
    assert report and all(line.startswith("PASS") for line in report)
    assert (out / "fig2" / "twr_sweep.csv").exists()


@pytest.mark.parametrize(
    "figure, seed",
    [("FIG3", None), ("FIG4", None), ("FIG6", 1), ("FIG6", 3)],
)
def test_reproduce_passes_its_checks(tmp_path, figure, seed):
    out = tmp_path / "out"
    seed_args = [] if seed is None else ["-s", str(seed)]
    assert schedloc(["-q", "-o", str(out), *seed_args, "reproduce", figure]) == EXIT_SUCCESS
    report = (out / figure.lower() / "report.txt").read_text(encoding="UTF-8").splitlines()
    assert report and all(line.startswith("PASS") for line in report)


def test_calibration_benefit_separates_raw_and_calibrated():
    config = load_experiment_config(preset="fig6", seed=1)
    checks = calibration_benefit(config, schedule_matrices(config), False)

    assert len(checks) == 4
    assert all(check.passed for check in checks), [str(check) for check in checks]
    assert [check.name.split(" at ")[0] for check in checks] == [
        "raw bias",
        "calibrated bias",
    ] * 2


def _scatter_result(covariance, n_runs=1000, seed=5):
    rng = np.random.default_rng(seed)
    estimates = rng.multivariate_normal(np.zeros(2), covariance, size=n_runs)
    return MonteCarloResult(
        estimates, np.ones(n_runs, dtype=bool), np.zeros(2), ellipse_from_samples(estimates)
    )


@pytest.mark.parametrize("scale, passed", [(1.0, True), (0.5, False)])
def test_bound_checks_allow_for_sampling_error(scale, passed):
    bound = np.diag([4e-4, 1e-4])
    bound_ellipse = error_ellipse(bound, (0.0, 0.0))
    checks = bound_checks((0.0, 0.0), bound, bound_ellipse, _scatter_result(scale * bound))

    assert [check.name for check in checks] == [
        "bound area at (0.0, 0.0)",
        "bound dominance at (0.0, 0.0)",
    ]
    assert [check.passed for check in checks] == [passed, passed]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
