import logging
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..config import SPEED_OF_LIGHT
from ..models import (
    ClockParams,
    NetworkClocks,
    NetworkGeometry,
    NoiseParams,
    ranges_from_geometry,
)
from ..schedule import Schedule, ScheduleMatrices, build_schedule_matrices


#########################################################################################
# Types
#########################################################################################


class TwrObservation(NamedTuple):
    """Round trips at nodes 1 and 2 plus the listener's pair at node 3 (seconds)."""

    y1: float
    y2: float
    y3_12: float
    y3_21: float


@dataclass(frozen=True)
class BatchTruth:
    theta_true: np.ndarray
    listener_pos: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MeasurementBatch:
    """
    One schedule pass as seen by the listener.

    Attributes:
        y: M listener timings in seconds
        delta_actual: M generated delays carried as payload, None when the
            payload was not received
        batch_index: Position of the pass in its stream
        schedule: Schedule the pass followed
        truth: Simulation ground truth, None for captured data
    """

    y: np.ndarray
    delta_actual: Optional[np.ndarray]
    batch_index: int
    schedule: Schedule
    truth: Optional[BatchTruth] = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        if y.shape != (self.schedule.n_measurements,):
            raise ValueError(
                f"batch {self.batch_index}: {y.shape} timings for "
                f"{self.schedule.n_measurements} measurements"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError(f"batch {self.batch_index}: timings must be finite")
        object.__setattr__(self, "y", y)

        if self.delta_actual is not None:
            delta = np.asarray(self.delta_actual, dtype=float)
            if delta.shape != y.shape:
                raise ValueError(
                    f"batch {self.batch_index}: {delta.shape} delays for {y.shape} timings"
                )
            if np.any(delta <= 0):
                raise ValueError(f"batch {self.batch_index}: delays must be positive")
            object.__setattr__(self, "delta_actual", delta)

    def without_payload(self) -> "MeasurementBatch":
        return replace(self, delta_actual=None)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to generate a reproducible measurement stream."""

    geometry: NetworkGeometry
    clocks: NetworkClocks
    noise: NoiseParams
    schedule: Schedule
    n_batches: int = 1
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_batches < 1:
            raise ValueError(f"n_batches must be >= 1, got {self.n_batches}")
        if self.rng_seed < 0:
            raise ValueError(f"rng_seed must be >= 0, got {self.rng_seed}")
        if len(self.clocks.anchors) != self.geometry.n_anchors:
            raise ValueError(
                f"{len(self.clocks.anchors)} anchor clocks for "
                f"{self.geometry.n_anchors} anchors"
            )
        self.schedule.check_coverage(self.geometry.n_anchors)

    @property
    def theta_true(self) -> np.ndarray:
        return self.clocks.relative_skews

    @property
    def measurement_sigma(self) -> float:
        return math.sqrt(self.noise.measurement_variance(self.clocks.listener.jitter_var))


def batch_rng(seed: int, batch_index: int) -> np.random.Generator:
    """Independent generator for one batch, derived from (seed, batch_index)."""
    return np.random.default_rng([seed, batch_index])


def draw_clocks(
    n_anchors: int,
    skew_span: float,
    rng: np.random.Generator,
    jitter_var: float = 0.0,
    delay_err_sigma: float = 0.0,
    listener_skew: float = 0.0,
) -> NetworkClocks:
    """Anchor skews drawn uniformly in +-skew_span; shared jitter and delay error."""
    skews = rng.uniform(-skew_span, skew_span, size=n_anchors)
    anchors = tuple(
        ClockParams(skew=float(skew), jitter_var=jitter_var, delay_err_sigma=delay_err_sigma)
        for skew in skews
    )
    listener = ClockParams(skew=listener_skew, jitter_var=jitter_var)
    return NetworkClocks(anchors, listener)


#########################################################################################
# Two-Way Ranging
#########################################################################################


def _noise_std(clock: ClockParams, noise: NoiseParams) -> float:
    return math.sqrt(noise.measurement_variance(clock.jitter_var))


def simulate_twr(
    rho12: float,
    clocks1: ClockParams,
    clocks2: ClockParams,
    clocks3: ClockParams,
    rho13: float,
    rho23: float,
    delta: float,
    rng: np.random.Generator,
    noise: Optional[NoiseParams] = None,
) -> TwrObservation:
    """
    Two-way ranging between nodes 1 and 2 overheard by node 3.

    Node 1 pings, node 2 responds after Delta_2 = delta + eps_2 and node 1
    transmits again after Delta_1 = delta + eps_1. Every observation draws
    its own noise with variance 2 sigma_j^2 + 2 sigma_c^2 of the node that
    timestamps it.

    Args:
        rho12, rho13, rho23: Pairwise distances in metres
        clocks1, clocks2, clocks3: Clock models of the three nodes
        delta: Nominal response delay in seconds
        rng: Random generator
        noise: Channel noise, none by default

    Returns:
        TwrObservation(y1, y2, y3_12, y3_21)
    """
    if min(rho12, rho13, rho23) <= 0:
        raise ValueError("ranges must be positive")
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    noise = noise or NoiseParams()

    eps1 = rng.standard_normal() * clocks1.delay_err_sigma
    eps2 = rng.standard_normal() * clocks2.delay_err_sigma
    delay1 = delta + eps1
    delay2 = delta + eps2
    skew1, skew2, skew3 = clocks1.skew, clocks2.skew, clocks3.skew

    y1 = (
        2 * rho12 / SPEED_OF_LIGHT * (1 + skew1)
        + delay2 * (1 + skew1 - skew2)
        + rng.standard_normal() * _noise_std(clocks1, noise)
    )
    y2 = (
        2 * rho12 / SPEED_OF_LIGHT * (1 + skew2)
        + delay1 * (1 + skew2 - skew1)
        + rng.standard_normal() * _noise_std(clocks2, noise)
    )
    y3_12 = (
        (rho12 + rho23 - rho13) / SPEED_OF_LIGHT * (1 + skew3)
        + delay2 * (1 + skew3 - skew2)
        + rng.standard_normal() * _noise_std(clocks3, noise)
    )
    y3_21 = (
        (rho12 + rho13 - rho23) / SPEED_OF_LIGHT * (1 + skew3)
        + delay1 * (1 + skew3 - skew1)
        + rng.standard_normal() * _noise_std(clocks3, noise)
    )
    return TwrObservation(y1, y2, y3_12, y3_21)


class LineFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def fit_line(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Least-squares line with its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - np.sum(residual**2) / total if total > 0 else 1.0
    return LineFit(float(slope), float(intercept), float(r_squared))


def twr_skew_sweep(
    rho12: float,
    rho13: float,
    rho23: float,
    clocks1: ClockParams,
    clocks2: ClockParams,
    clocks3: ClockParams,
    deltas: Sequence[float],
) -> np.ndarray:
    """
    Skew error of the listener's pair sum over a grid of delays.

    Noise and delay errors are switched off, so the error
    y3_12 + y3_21 - 2 rho12/c - 2 delta is exactly affine in delta with slope
    2 skew3 - skew1 - skew2.

    Returns:
        Error in seconds for every delay in `deltas`
    """
    quiet = [
        replace(clock, jitter_var=0.0, delay_err_sigma=0.0)
        for clock in (clocks1, clocks2, clocks3)
    ]
    rng = np.random.default_rng(0)
    errors = []
    for delta in deltas:
        observation = simulate_twr(rho12, *quiet, rho13, rho23, delta, rng)
        errors.append(
            observation.y3_12 + observation.y3_21 - 2 * rho12 / SPEED_OF_LIGHT - 2 * delta
        )
    return np.array(errors)


#########################################################################################
# Scheduled Measurements
#########################################################################################


def simulate_batch(
    cfg: SimConfig,
    matrices: ScheduleMatrices,
    rng: np.random.Generator,
    batch_index: int = 0,
) -> MeasurementBatch:
    """
    One schedule pass under the full clock-error model.

    y = (1/c) S rho + D + (1/c) skew_L S rho + R D + (I + R) eps + eta,
    with D = delta 1, R = Diag(theta of each delay holder), eps the delay
    errors of the holders and eta ~ N(0, sigma^2 I).

    Args:
        cfg: Simulation configuration
        matrices: Matrices of cfg.schedule
        rng: Generator owned by this batch
        batch_index: Index recorded on the batch

    Returns:
        MeasurementBatch with the generated delays as payload and the truth

    Raises:
        ValueError: If cfg and matrices disagree on the schedule or N
    """
    if (
        matrices.schedule.order != cfg.schedule.order
        or matrices.n_anchors != cfg.geometry.n_anchors
    ):
        raise ValueError("invalid schedule: matrices were built for another network")

    schedule = cfg.schedule
    n_measurements = schedule.n_measurements
    holders = np.array(schedule.delay_holders) - 1

    propagation = matrices.S @ ranges_from_geometry(cfg.geometry).values / SPEED_OF_LIGHT
    nominal = schedule.nominal_delays()
    theta = cfg.theta_true
    skew_bias = theta[holders]
    eps_sigma = np.array([clock.delay_err_sigma for clock in cfg.clocks.anchors])[holders]

    eps = rng.standard_normal(n_measurements) * eps_sigma
    eta = rng.standard_normal(n_measurements) * cfg.measurement_sigma

    y = (
        propagation
        + nominal
        + cfg.clocks.listener.skew * propagation
        + skew_bias * nominal
        + (1.0 + skew_bias) * eps
        + eta
    )
    truth = BatchTruth(theta_true=theta, listener_pos=cfg.geometry.listener_true)
    return MeasurementBatch(
        y=y,
        delta_actual=nominal + eps,
        batch_index=batch_index,
        schedule=schedule,
        truth=truth,
    )


def simulate_batches(
    cfg: SimConfig,
    matrices: Optional[ScheduleMatrices] = None,
    progress: bool = False,
    first_index: int = 0,
) -> List[MeasurementBatch]:
    """
    Generate cfg.n_batches passes, each from its own (seed, index) stream.

    Batches are independent, so any slice of the stream can be regenerated
    on its own.
    """
    if matrices is None:
        matrices = build_schedule_matrices(cfg.schedule, cfg.geometry.n_anchors)

    indices = range(first_index, first_index + cfg.n_batches)
    batches = [
        simulate_batch(cfg, matrices, batch_rng(cfg.rng_seed, index), index)
        for index in tqdm(indices, desc="Simulating", unit="batch", disable=not progress)
    ]
    logging.debug("Simulated %d batches (seed %d)", len(batches), cfg.rng_seed)
    return batches
