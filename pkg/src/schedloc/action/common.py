import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..calibration import CalibratedBatch, CalibrationSettings, calibrate_stream
from ..config import NS, SPEED_OF_LIGHT
from ..estimation import (
    ErrorEllipse,
    PositionEstimate,
    Prior,
    ellipse_from_samples,
    error_ellipse,
    listener_bound,
    map_estimate,
)
from ..experiment import ExperimentConfig
from ..models import NetworkGeometry, ranges_from_geometry
from ..schedule import ScheduleMatrices, build_schedule_matrices
from ..simkit import MeasurementBatch, simulate_batches


class Fix(NamedTuple):
    batch_indices: List[int]
    estimate: PositionEstimate


def schedule_matrices(config: ExperimentConfig) -> ScheduleMatrices:
    return build_schedule_matrices(config.schedule, config.geometry.n_anchors)


def measurement_summary(
    batches: Sequence[MeasurementBatch], geometry: Optional[NetworkGeometry] = None
) -> List[str]:
    """
    Per-measurement mean and standard deviation of y - delta in ns.

    With a known geometry the expected propagation term is removed as well,
    leaving the clock and noise contributions.
    """
    if not batches:
        return []
    schedule = batches[0].schedule
    offsets = np.array([batch.y for batch in batches]) - schedule.nominal_delay
    if geometry is not None and geometry.listener_true is not None:
        matrices = build_schedule_matrices(schedule, geometry.n_anchors)
        offsets = offsets - matrices.S @ ranges_from_geometry(geometry).values / SPEED_OF_LIGHT

    lines = []
    for k, (sender, next_sender) in enumerate(schedule.pairs):
        lines.append(
            f"  k={k} ({sender}->{next_sender}): mean {offsets[:, k].mean() / NS:9.3f} ns, "
            f"std {offsets[:, k].std() / NS:7.3f} ns"
        )
    return lines


#########################################################################################
# Fixes
#########################################################################################


def group_fixes(
    calibrated: Sequence[CalibratedBatch], batches_per_fix: int
) -> List[List[CalibratedBatch]]:
    """
    Consecutive kept batches pooled into fixes of batches_per_fix each.

    A trailing partial group is dropped unless it is the only one.
    """
    kept = [batch for batch in calibrated if not batch.rejected]
    groups = [
        kept[start : start + batches_per_fix]
        for start in range(0, len(kept), batches_per_fix)
    ]
    if len(groups) > 1 and len(groups[-1]) < batches_per_fix:
        logging.debug("Dropping %d batches of an incomplete fix", len(groups[-1]))
        groups.pop()
    return groups


def _stack(group: Sequence[CalibratedBatch]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.concatenate([batch.y_cal for batch in group]),
        np.concatenate([batch.d_vec for batch in group]),
    )


def localize_fixes(
    calibrated: Sequence[CalibratedBatch],
    matrices: ScheduleMatrices,
    prior: Prior,
    batches_per_fix: int,
    progress: bool = False,
) -> List[Fix]:
    """MAP fix for every group of pooled batches; non-convergence is logged, not fatal."""
    fixes = []
    groups = group_fixes(calibrated, batches_per_fix)
    for group in tqdm(groups, desc="Localizing", unit="fix", disable=not progress):
        y_cal, d_vec = _stack(group)
        estimate = map_estimate(y_cal, d_vec, matrices, prior)
        indices = [batch.batch_index for batch in group]
        if not estimate.converged:
            logging.warning("Fix over batches %d-%d did not converge", indices[0], indices[-1])
        fixes.append(Fix(indices, estimate))
    return fixes


def pooled_estimate(
    calibrated: Sequence[CalibratedBatch], matrices: ScheduleMatrices, prior: Prior
) -> Optional[PositionEstimate]:
    """One MAP fix over every kept batch."""
    kept = [batch for batch in calibrated if not batch.rejected]
    if not kept:
        return None
    y_cal, d_vec = _stack(kept)
    return map_estimate(y_cal, d_vec, matrices, prior)


def fix_bias(fixes: Sequence[Fix], truth: np.ndarray) -> float:
    """Distance between the mean converged fix and the truth (inf if none converged)."""
    converged = [fix.estimate.x_hat for fix in fixes if fix.estimate.converged]
    if not converged:
        return float("inf")
    return float(np.linalg.norm(np.mean(converged, axis=0) - truth))


#########################################################################################
# Monte Carlo
#########################################################################################


@dataclass
class MonteCarloResult:
    """
    Attributes:
        estimates: R x 2 listener estimates
        converged: Convergence flag per run
        truth: True listener position
        ellipse: Sample ellipse of the estimates
    """

    estimates: np.ndarray
    converged: np.ndarray
    truth: np.ndarray
    ellipse: ErrorEllipse

    @property
    def bias(self) -> float:
        return float(np.linalg.norm(self.estimates.mean(axis=0) - self.truth))

    @property
    def covariance(self) -> np.ndarray:
        return np.cov(self.estimates, rowvar=False)

    @property
    def area_standard_error(self) -> float:
        """Sampling error of the ellipse area for Gaussian estimates."""
        return self.ellipse.area / np.sqrt(len(self.estimates) - 1)

    def variance_standard_error(self, direction: np.ndarray) -> float:
        """Sampling error of the estimate variance along a unit direction."""
        variance = float(direction @ self.covariance @ direction)
        return variance * np.sqrt(2.0 / (len(self.estimates) - 1))


def run_map_monte_carlo(
    config: ExperimentConfig,
    matrices: Optional[ScheduleMatrices] = None,
    n_runs: Optional[int] = None,
    batches_per_fix: Optional[int] = None,
    calibration: Optional[CalibrationSettings] = None,
    progress: bool = False,
) -> MonteCarloResult:
    """
    Repeated simulate -> calibrate -> MAP runs at the configured listener.

    Every run draws its anchor truth from the anchor prior, since the
    hybrid bound treats the anchor positions as random. Estimation always
    starts from the surveyed anchors.

    Args:
        config: Experiment with a known listener position
        matrices: Matrices of config.schedule, built when None
        n_runs: Runs, config.estimation.monte_carlo_runs when None
        batches_per_fix: Batches pooled per run
        calibration: Calibration switches, config.calibration when None
        progress: Show a progress bar
    """
    if config.geometry.listener_true is None:
        raise ValueError("listener position required for a Monte-Carlo run")
    matrices = matrices or schedule_matrices(config)
    n_runs = n_runs or config.estimation.monte_carlo_runs
    batches_per_fix = batches_per_fix or config.estimation.batches_per_fix
    calibration = calibration or config.calibration
    calibrate = calibration.retrieval or calibration.rls

    prior = config.build_prior()
    surveyed = config.geometry.anchors
    anchor_ranges = config.geometry.anchor_ranges()

    estimates = np.zeros((n_runs, 2))
    converged = np.zeros(n_runs, dtype=bool)
    for run in tqdm(range(n_runs), desc="Monte Carlo", unit="run", disable=not progress):
        rng = np.random.default_rng([config.rng_seed, run, 1])
        anchors = surveyed + rng.normal(0.0, config.estimation.anchor_prior_std, surveyed.shape)
        sim = config.to_sim_config(
            n_batches=batches_per_fix,
            geometry=config.geometry.with_anchors(anchors),
        )
        batches = simulate_batches(sim, matrices, first_index=run * batches_per_fix)

        if calibrate:
            kept = calibrate_stream(batches, matrices, anchor_ranges, calibration).kept
            if not kept:
                logging.warning("Monte-Carlo run %d lost every batch to outlier rejection", run)
                estimates[run] = np.nan
                continue
            y, d_vec = _stack(kept)
        else:
            y = np.concatenate([batch.y for batch in batches])
            d_vec = np.concatenate([batch.schedule.nominal_delays() for batch in batches])

        estimate = map_estimate(y, d_vec, matrices, prior)
        estimates[run] = estimate.x_hat
        converged[run] = estimate.converged

    valid = np.all(np.isfinite(estimates), axis=1)
    if not np.all(converged):
        logging.warning(
            "%d of %d Monte-Carlo runs did not converge", n_runs - converged.sum(), n_runs
        )
    estimates = estimates[valid]
    return MonteCarloResult(
        estimates=estimates,
        converged=converged[valid],
        truth=config.geometry.listener_true,
        ellipse=ellipse_from_samples(estimates, config.estimation.confidence),
    )


#########################################################################################
# Bound
#########################################################################################


def listener_hcrb(
    config: ExperimentConfig, matrices: Optional[ScheduleMatrices] = None
) -> np.ndarray:
    """2x2 HCRB of the listener for one fix of batches_per_fix pooled batches."""
    if config.geometry.listener_true is None:
        raise ValueError("listener position required to evaluate the bound")
    matrices = matrices or schedule_matrices(config)
    return listener_bound(
        config.geometry.stacked(),
        matrices,
        config.estimation.sigma,
        config.build_prior(),
        n_stack=config.estimation.batches_per_fix,
    )


def hcrb_ellipse(
    config: ExperimentConfig, matrices: Optional[ScheduleMatrices] = None
) -> ErrorEllipse:
    return error_ellipse(
        listener_hcrb(config, matrices),
        config.geometry.listener_true,
        config.estimation.confidence,
    )
