import logging
from argparse import Namespace
from pathlib import Path

import numpy as np

from ..calibration import calibrate_stream
from ..common import (
    ensure_directory,
    read_json,
    read_measurements_csv,
    write_calibrated_csv,
    write_rejected_csv,
    write_rls_trace_csv,
)
from ..config import PPM
from ..experiment import ExperimentConfig
from ..models import DataError
from .common import schedule_matrices


def _report_against_truth(theta_hat: np.ndarray, truth_path: Path) -> None:
    # truth.json is optional
    try:
        truth = read_json(truth_path)
    except DataError as err:
        logging.warning("Skipping truth comparison: %s", err)
        return
    if not truth or "theta_true" not in truth:
        return
    try:
        theta_true = np.asarray(truth["theta_true"], dtype=float)
    except (TypeError, ValueError):
        logging.warning("Skipping truth comparison: %s has a malformed theta_true", truth_path)
        return
    if theta_true.shape != theta_hat.shape:
        logging.warning("Ignoring %s: it describes another network", truth_path)
        return
    error = (theta_hat - theta_true) / PPM
    print(f"  error vs {truth_path.name}: {np.array2string(error, precision=4)} ppm")


def calibrate(config: ExperimentConfig, arguments: Namespace) -> None:
    """
    Calibrate a measurement CSV.

    Writes calibrated.csv, rejected.csv and rls_trace.csv to the output
    directory. Anchor ranges come from the configured anchor geometry.
    """
    input_path = Path(arguments.input)
    batches = read_measurements_csv(input_path, config.schedule)
    out = ensure_directory(config.output_directory)

    result = calibrate_stream(
        batches,
        schedule_matrices(config),
        config.geometry.anchor_ranges(),
        config.calibration,
        progress=not arguments.quiet,
    )

    n_rows = write_calibrated_csv(out / "calibrated.csv", result.batches)
    n_rejected = write_rejected_csv(out / "rejected.csv", result.batches)
    write_rls_trace_csv(out / "rls_trace.csv", result)

    print(
        f"Calibrated {len(result.kept)} of {len(batches)} batches "
        f"({n_rejected} rejected, {result.n_fallbacks} without delay payload), "
        f"{n_rows} rows -> {out / 'calibrated.csv'}"
    )
    if result.state is not None:
        theta_ppm = result.state.theta_hat / PPM
        print(f"  theta_hat: {np.array2string(theta_ppm, precision=4)} ppm")
        _report_against_truth(result.state.theta_hat, input_path.parent / "truth.json")
