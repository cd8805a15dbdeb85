import csv
import json
import logging
import os
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..calibration import CalibratedBatch, CalibrationResult
from ..config import (
    CALIBRATED_CSV_COLUMNS,
    MEASUREMENT_CSV_COLUMNS,
    REJECTED_CSV_COLUMNS,
)
from ..models import ConfigError, DataError
from ..schedule import Schedule
from ..simkit import MeasurementBatch

PathLike = Union[str, Path]


#########################################################################################
# Helpers
#########################################################################################


def ensure_directory(path: PathLike) -> Path:
    """
    Create an output directory if needed.

    Raises:
        ConfigError: If the directory cannot be created or written
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {path}: {err}") from err
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _format(value: float) -> str:
    # repr is the shortest string that parses back to the same double
    return repr(float(value))


def _parse_float(text: str, path: PathLike, line: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError) as err:
        raise DataError(f"{path}:{line}: {column} is not a number: {text!r}") from err
    if not np.isfinite(value):
        raise DataError(f"{path}:{line}: {column} must be finite, got {text!r}")
    return value


def _parse_int(text: str, path: PathLike, line: int, column: str) -> int:
    try:
        return int(text)
    except (TypeError, ValueError) as err:
        raise DataError(f"{path}:{line}: {column} is not an integer: {text!r}") from err


def _read_rows(path: PathLike, columns: Sequence[str]) -> List[tuple]:
    """Rows of a CSV with the exact header `columns`, paired with line numbers."""
    try:
        with open(path, "r", encoding="UTF-8", newline="") as file:
            reader = csv.reader(file)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}:1: file is empty")
            if tuple(name.strip() for name in header) != tuple(columns):
                raise DataError(
                    f"{path}:1: expected columns {','.join(columns)}, got {','.join(header)}"
                )
            rows = []
            for row in reader:
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(columns):
                    raise DataError(
                        f"{path}:{reader.line_num}: expected {len(columns)} fields, "
                        f"got {len(row)}"
                    )
                rows.append((reader.line_num, [cell.strip() for cell in row]))
            return rows
    except FileNotFoundError as err:
        raise DataError(f"input file does not exist: {path}") from err
    except (OSError, csv.Error, UnicodeDecodeError) as err:
        raise DataError(f"cannot read {path}: {err}") from err


def _group_by_batch(rows: List[tuple], path: PathLike) -> "OrderedDict[int, List[tuple]]":
    groups: "OrderedDict[int, List[tuple]]" = OrderedDict()
    for line, cells in rows:
        batch = _parse_int(cells[0], path, line, "batch")
        last = next(reversed(groups)) if groups else None
        if last is not None and batch != last and (batch in groups or batch < last):
            raise DataError(f"{path}:{line}: batch {batch} is out of order")
        groups.setdefault(batch, []).append((line, cells))
    return groups


def _check_k(cells: list, expected: int, path: PathLike, line: int) -> None:
    k = _parse_int(cells[1], path, line, "k")
    if k != expected:
        raise DataError(f"{path}:{line}: expected k = {expected}, got {k}")


#########################################################################################
# Measurements
#########################################################################################


def write_measurements_csv(path: PathLike, batches: Sequence[MeasurementBatch]) -> None:
    """One row per measurement; empty delay column when the payload is missing."""
    with open(path, "w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(MEASUREMENT_CSV_COLUMNS)
        for batch in batches:
            for k, (sender, next_sender) in enumerate(batch.schedule.pairs):
                delay = "" if batch.delta_actual is None else _format(batch.delta_actual[k])
                writer.writerow(
                    [batch.batch_index, k, sender, next_sender, _format(batch.y[k]), delay]
                )
    logging.debug("Wrote %d batches to %s", len(batches), path)


def read_measurements_csv(path: PathLike, schedule: Schedule) -> List[MeasurementBatch]:
    """
    Parse a measurement CSV recorded with `schedule`.

    Args:
        path: CSV file in the measurement format
        schedule: The schedule every batch must follow

    Returns:
        Batches in file order

    Raises:
        DataError: On any malformed row, naming file and line
    """
    rows = _read_rows(path, MEASUREMENT_CSV_COLUMNS)
    batches = []
    for batch_index, group in _group_by_batch(rows, path).items():
        if len(group) != schedule.n_measurements:
            raise DataError(
                f"{path}:{group[0][0]}: batch {batch_index} has {len(group)} rows, "
                f"the schedule has {schedule.n_measurements} measurements"
            )

        timings, delays = [], []
        for k, (line, cells) in enumerate(group):
            _check_k(cells, k, path, line)
            pair = (
                _parse_int(cells[2], path, line, "sender"),
                _parse_int(cells[3], path, line, "next_sender"),
            )
            if pair != schedule.pairs[k]:
                raise DataError(
                    f"{path}:{line}: transmission {pair} does not match the "
                    f"schedule pair {schedule.pairs[k]}"
                )
            timings.append(_parse_float(cells[4], path, line, "y_seconds"))
            delays.append(
                None
                if cells[5] == ""
                else _parse_float(cells[5], path, line, "delta_actual_seconds")
            )

        missing = [delay is None for delay in delays]
        if any(missing) and not all(missing):
            line = group[missing.index(True)][0]
            raise DataError(f"{path}:{line}: batch {batch_index} has a partial delay payload")
        try:
            batches.append(
                MeasurementBatch(
                    y=np.array(timings),
                    delta_actual=None if all(missing) else np.array(delays),
                    batch_index=batch_index,
                    schedule=schedule,
                )
            )
        except ValueError as err:
            raise DataError(f"{path}:{group[0][0]}: {err}") from err

    logging.info("Read %d batches from %s", len(batches), path)
    return batches


#########################################################################################
# Calibration Output
#########################################################################################


def write_calibrated_csv(path: PathLike, calibrated: Sequence[CalibratedBatch]) -> int:
    """
    Write kept batches; rejected ones are skipped.

    Returns:
        Number of data rows written
    """
    n_rows = 0
    with open(path, "w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(CALIBRATED_CSV_COLUMNS)
        for batch in calibrated:
            if batch.rejected:
                continue
            for k, (y_cal, delay) in enumerate(zip(batch.y_cal, batch.d_vec)):
                writer.writerow([batch.batch_index, k, _format(y_cal), _format(delay)])
                n_rows += 1
    return n_rows


def read_calibrated_csv(path: PathLike, schedule: Schedule) -> List[CalibratedBatch]:
    """
    Parse calibrated timings written by `write_calibrated_csv`.

    Raises:
        DataError: On any malformed row, naming file and line
    """
    rows = _read_rows(path, CALIBRATED_CSV_COLUMNS)
    calibrated = []
    for batch_index, group in _group_by_batch(rows, path).items():
        if len(group) != schedule.n_measurements:
            raise DataError(
                f"{path}:{group[0][0]}: batch {batch_index} has {len(group)} rows, "
                f"the schedule has {schedule.n_measurements} measurements"
            )
        y_cal, delays = [], []
        for k, (line, cells) in enumerate(group):
            _check_k(cells, k, path, line)
            y_cal.append(_parse_float(cells[2], path, line, "y_cal_seconds"))
            delays.append(_parse_float(cells[3], path, line, "d_vec_seconds"))
        calibrated.append(
            CalibratedBatch(
                batch_index=batch_index, y_cal=np.array(y_cal), d_vec=np.array(delays)
            )
        )
    logging.info("Read %d calibrated batches from %s", len(calibrated), path)
    return calibrated


def write_rejected_csv(path: PathLike, calibrated: Sequence[CalibratedBatch]) -> int:
    n_rejected = 0
    with open(path, "w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(REJECTED_CSV_COLUMNS)
        for batch in calibrated:
            if batch.rejected:
                writer.writerow([batch.batch_index, "outlier"])
                n_rejected += 1
    return n_rejected


def write_rls_trace_csv(path: PathLike, result: CalibrationResult) -> None:
    """n, theta_hat_1..theta_hat_N, trace_P per RLS update (n = 0 is the prior)."""
    if result.state is None:
        logging.debug("Skew estimation disabled, no RLS trace written")
        return
    n_anchors = result.state.n_params
    header = ["n", *(f"theta_hat_{i}" for i in range(1, n_anchors + 1)), "trace_P"]
    with open(path, "w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(header)
        for row in result.trace:
            writer.writerow([int(row[0]), *(_format(value) for value in row[1:])])


#########################################################################################
# Matrices and JSON
#########################################################################################


def write_matrix_csv(path: PathLike, matrix: np.ndarray) -> None:
    """Headerless, row-major, full precision."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file)
        for row in matrix:
            writer.writerow([_format(value) for value in row])


def read_matrix_csv(path: PathLike) -> np.ndarray:
    try:
        with open(path, "r", encoding="UTF-8", newline="") as file:
            rows = [row for row in csv.reader(file) if row]
    except (OSError, csv.Error, UnicodeDecodeError) as err:
        raise DataError(f"cannot read {path}: {err}") from err
    return np.array(
        [
            [
                _parse_float(cell, path, line, f"column {column}")
                for column, cell in enumerate(row, 1)
            ]
            for line, row in enumerate(rows, 1)
        ]
    )


def write_table_csv(
    path: PathLike, header: Sequence[str], rows: Sequence[Sequence[Any]]
) -> None:
    """Plot-ready table; floats at full precision, everything else as str()."""
    with open(path, "w", encoding="UTF-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    _format(value) if isinstance(value, (float, np.floating)) else value
                    for value in row
                ]
            )


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: PathLike, payload: Dict[str, Any]) -> None:
    with open(path, "w", encoding="UTF-8") as file:
        json.dump(payload, file, indent=2, default=_to_builtin)
        file.write("\n")


def read_json(path: PathLike) -> Optional[Dict[str, Any]]:
    """
    Parsed JSON object, None when the file does not exist.

    Raises:
        DataError: If the file cannot be read or is not a JSON object
    """
    try:
        with open(path, "r", encoding="UTF-8") as file:
            payload = json.load(file)
    except FileNotFoundError:
        return None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read {path}: {err}") from err
    if not isinstance(payload, dict):
        raise DataError(f"{path}: expected a JSON object, got {type(payload).__name__}")
    return payload
