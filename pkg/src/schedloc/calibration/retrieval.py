import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from ..config import SPEED_OF_LIGHT
from ..models import RangeVector, n_anchor_pairs
from ..schedule import ScheduleMatrices
from ..simkit import MeasurementBatch


class DelayVector(NamedTuple):
    """Per-measurement delays D_vec and whether they came from the payload."""

    values: np.ndarray
    retrieved: bool


def apply_delay_retrieval(batch: MeasurementBatch, nominal_delta: float) -> DelayVector:
    """
    Delays to subtract from a batch.

    The payload carries the generated delay of every transmission, which
    removes the delay-resolution error. A batch without payload falls back
    to the nominal delay.

    Args:
        batch: Received schedule pass
        nominal_delta: Nominal delay delta in seconds

    Returns:
        DelayVector with retrieved=False when the fallback was used
    """
    if batch.delta_actual is not None:
        return DelayVector(np.array(batch.delta_actual, dtype=float), True)

    logging.debug("Batch %d has no delay payload, using nominal delay", batch.batch_index)
    return DelayVector(np.full(batch.schedule.n_measurements, float(nominal_delta)), False)


def reject_outliers(batch: MeasurementBatch, threshold: float) -> bool:
    """
    Whether a batch must be discarded.

    A batch is rejected when any measurement deviates from its delay by more
    than the threshold; such a pass contains a missed or corrupted packet.

    Args:
        batch: Received schedule pass
        threshold: Largest accepted |y_k - Delta_k| in seconds

    Returns:
        True if the batch is an outlier

    Raises:
        ValueError: If the threshold is negative
    """
    if threshold < 0:
        raise ValueError(f"outlier threshold must be >= 0, got {threshold}")
    delays = (
        batch.delta_actual
        if batch.delta_actual is not None
        else batch.schedule.nominal_delays()
    )
    return bool(np.any(np.abs(batch.y - delays) > threshold))


def _anchor_ranges(rho: Union[RangeVector, np.ndarray], n_anchors: int) -> np.ndarray:
    if isinstance(rho, RangeVector):
        return rho.anchor_block
    rho = np.asarray(rho, dtype=float)
    n_pairs = n_anchor_pairs(n_anchors)
    if rho.shape not in ((n_pairs,), (n_pairs + n_anchors,)):
        raise ValueError(
            f"dimension mismatch: {rho.shape} ranges for {n_anchors} anchors"
        )
    return rho[:n_pairs]


def skew_residual(
    batch: MeasurementBatch,
    matrices: ScheduleMatrices,
    rho: Union[RangeVector, np.ndarray],
    d_vec: np.ndarray,
) -> np.ndarray:
    """
    Anchor-range residual d_n = Pi' (S+ (y - D_vec) - rho / c).

    Only the anchor block of rho enters, so the listener ranges may be
    unknown. Without skews and noise the residual is zero; otherwise it
    equals G^T theta plus noise.

    Args:
        batch: Received schedule pass
        matrices: Matrices of the batch's schedule
        rho: Known anchor ranges (the full range vector is accepted)
        d_vec: Delays subtracted from the timings

    Returns:
        N(N-1)/2 residual in seconds
    """
    d_vec = np.asarray(d_vec, dtype=float)
    if d_vec.shape != batch.y.shape:
        raise ValueError(
            f"dimension mismatch: {d_vec.shape} delays for {batch.y.shape} timings"
        )
    anchor_ranges = _anchor_ranges(rho, matrices.n_anchors)
    return matrices.anchor_pinv @ (batch.y - d_vec) - anchor_ranges / SPEED_OF_LIGHT


@dataclass(frozen=True)
class CalibratedBatch:
    """
    Result of calibrating one batch.

    Rejected batches keep their index but carry no timings.
    """

    batch_index: int
    y_cal: Optional[np.ndarray]
    d_vec: Optional[np.ndarray]
    d_n: Optional[np.ndarray] = None
    rejected: bool = False
    retrieved: bool = True

    @classmethod
    def rejection(cls, batch_index: int) -> "CalibratedBatch":
        return cls(batch_index=batch_index, y_cal=None, d_vec=None, rejected=True)


def calibrate_batch(
    batch: MeasurementBatch,
    matrices: ScheduleMatrices,
    theta_hat: np.ndarray,
    d_vec: DelayVector,
    d_n: Optional[np.ndarray] = None,
) -> CalibratedBatch:
    """
    Remove the estimated skew bias: y_cal = y - Diag(D_vec) A theta_hat.

    Args:
        batch: Received schedule pass
        matrices: Matrices of the batch's schedule
        theta_hat: Relative skew estimate
        d_vec: Delays of the batch (from apply_delay_retrieval)
        d_n: Skew residual to keep alongside, if computed

    Returns:
        CalibratedBatch with the calibrated timings
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != (matrices.n_anchors,):
        raise ValueError(
            f"dimension mismatch: {theta_hat.shape} skews for {matrices.n_anchors} anchors"
        )
    delays = np.asarray(d_vec.values, dtype=float)
    y_cal = batch.y - delays * (matrices.A @ theta_hat)
    return CalibratedBatch(
        batch_index=batch.batch_index,
        y_cal=y_cal,
        d_vec=delays,
        d_n=d_n,
        retrieved=d_vec.retrieved,
    )
