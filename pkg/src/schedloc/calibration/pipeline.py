import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from ..config import DEFAULT_OUTLIER_THRESHOLD, DEFAULT_SIGMA
from ..models import RangeVector
from ..schedule import ScheduleMatrices, build_g_matrix
from ..simkit import MeasurementBatch
from .retrieval import (
    CalibratedBatch,
    DelayVector,
    apply_delay_retrieval,
    calibrate_batch,
    reject_outliers,
    skew_residual,
)
from .rls import RlsState, init_rls, rls_update


@dataclass(frozen=True)
class CalibrationSettings:
    """
    Switches of the calibration pipeline.

    Attributes:
        retrieval: Subtract the payload delays instead of the nominal one
        rls: Estimate and remove the relative skews
        outlier_threshold: Largest accepted |y_k - Delta_k| in seconds
        apply_final_estimate: Calibrate every batch with the final estimate
            instead of the estimate available when it arrived
        noise_scale: Whitening scale of the RLS in seconds
    """

    retrieval: bool = True
    rls: bool = True
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD
    apply_final_estimate: bool = True
    noise_scale: float = DEFAULT_SIGMA


@dataclass
class CalibrationResult:
    batches: List[CalibratedBatch] = field(default_factory=list)
    state: Optional[RlsState] = None
    trace: List[List[float]] = field(default_factory=list)
    n_fallbacks: int = 0

    @property
    def kept(self) -> List[CalibratedBatch]:
        return [batch for batch in self.batches if not batch.rejected]

    @property
    def rejected(self) -> List[CalibratedBatch]:
        return [batch for batch in self.batches if batch.rejected]

    @property
    def theta_hat(self) -> np.ndarray:
        if self.state is None:
            raise ValueError("skew estimation was disabled")
        return self.state.theta_hat


def _nominal(batch: MeasurementBatch) -> DelayVector:
    return DelayVector(batch.schedule.nominal_delays(), False)


def calibrate_stream(
    batches: Sequence[MeasurementBatch],
    matrices: ScheduleMatrices,
    rho: Union[RangeVector, np.ndarray],
    settings: Optional[CalibrationSettings] = None,
    progress: bool = False,
) -> CalibrationResult:
    """
    Run a measurement stream through outlier rejection, delay retrieval,
    skew estimation and calibration.

    Outliers are removed before they can reach the RLS. Batches keep their
    order in the result, rejected ones included.

    Args:
        batches: Measurement stream of one schedule
        matrices: Matrices of that schedule
        rho: Known anchor ranges
        settings: Pipeline switches, defaults when None
        progress: Show a progress bar

    Returns:
        CalibrationResult with per-batch results, the final RLS state and the
        convergence trace (one row per update)
    """
    settings = settings or CalibrationSettings()
    state = init_rls(matrices.n_anchors, settings.noise_scale) if settings.rls else None
    zero_skews = np.zeros(matrices.n_anchors)

    accepted = []
    result = CalibrationResult(state=state)
    if state is not None:
        result.trace.append(state.trace_record())

    fallbacks = 0
    for batch in tqdm(batches, desc="Calibrating", unit="batch", disable=not progress):
        if reject_outliers(batch, settings.outlier_threshold):
            logging.debug("Rejected batch %d as outlier", batch.batch_index)
            result.batches.append(CalibratedBatch.rejection(batch.batch_index))
            continue

        if settings.retrieval:
            delays = apply_delay_retrieval(batch, batch.schedule.nominal_delay)
            fallbacks += not delays.retrieved
        else:
            delays = _nominal(batch)

        d_n = skew_residual(batch, matrices, rho, delays.values)
        if state is not None:
            g_matrix = (
                build_g_matrix(matrices, batch.schedule, delays.values)
                if delays.retrieved
                else matrices.G
            )
            state = rls_update(state, g_matrix, d_n)
            result.trace.append(state.trace_record())

        theta_now = zero_skews if state is None else state.theta_hat
        accepted.append((len(result.batches), batch, delays, d_n))
        result.batches.append(calibrate_batch(batch, matrices, theta_now, delays, d_n))

    result.state = state
    result.n_fallbacks = fallbacks
    if state is not None and settings.apply_final_estimate:
        for position, batch, delays, d_n in accepted:
            result.batches[position] = calibrate_batch(
                batch, matrices, state.theta_hat, delays, d_n
            )

    n_rejected = len(result.batches) - len(accepted)
    if batches and not accepted:
        logging.warning("All %d batches were rejected as outliers", len(batches))
    logging.debug(
        "Calibrated %d of %d batches (%d rejected, %d without delay payload)",
        len(accepted),
        len(batches),
        n_rejected,
        fallbacks,
    )
    if state is not None:
        logging.debug("Estimated relative skews: %s", np.array2string(state.theta_hat))
    return result
