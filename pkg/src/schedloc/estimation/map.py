"""
Maximum a-posteriori self-localization from calibrated timings.

The noise variance is unknown and profiled out, which turns the negative
log posterior into

    V(x) = 1/2 ln ||y_cal - S g(x)/c - D||^2 + beta/2 (x - mu)^T Pr^-1 (x - mu)

with beta = 1/(M + 2) and x = [x1, y1, ..., xN, yN, xL, yL]. The anchors are
estimated jointly with the listener under a tight prior around their
surveyed positions. Several batches of one schedule can be pooled into a
single fix; S is then stacked once per batch.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np

from ..config import (
    DEFAULT_ANCHOR_PRIOR_STD,
    DEFAULT_LISTENER_PRIOR_STD,
    MAP_ARMIJO_C1,
    MAP_BACKTRACK_FACTOR,
    MAP_GRADIENT_TOLERANCE,
    MAP_MAX_ITERATIONS,
    MAP_MIN_STEP_FRACTION,
    MAP_STEP_TOLERANCE,
    RESIDUAL_FLOOR,
    SPEED_OF_LIGHT,
    ZERO_RANGE_TOLERANCE,
)
from ..models import ranges_from_positions
from ..schedule import ScheduleMatrices


#########################################################################################
# Prior
#########################################################################################


@dataclass(frozen=True)
class Prior:
    """
    Gaussian prior on the stacked positions.

    Attributes:
        mean: mu, length 2(N+1)
        covariance: Pr, symmetric positive definite
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        covariance = np.asarray(self.covariance, dtype=float)
        if mean.ndim != 1 or mean.size % 2 or mean.size < 8:
            raise ValueError("prior mean must stack at least three anchors and a listener")
        if covariance.shape != (mean.size, mean.size):
            raise ValueError(f"prior covariance must be {mean.size}x{mean.size}")
        if not np.allclose(covariance, covariance.T):
            raise ValueError("prior covariance must be symmetric")
        try:
            np.linalg.cholesky(covariance)
        except np.linalg.LinAlgError as err:
            raise ValueError("prior covariance must be positive definite") from err
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)
        object.__setattr__(self, "_information", np.linalg.inv(covariance))

    @property
    def information(self) -> np.ndarray:
        """Pr^-1."""
        return self._information

    @property
    def n_anchors(self) -> int:
        return self.mean.size // 2 - 1


def build_prior(
    anchors: np.ndarray,
    listener_mean: Optional[Sequence[float]] = None,
    anchor_std: float = DEFAULT_ANCHOR_PRIOR_STD,
    listener_std: float = DEFAULT_LISTENER_PRIOR_STD,
) -> Prior:
    """
    Independent isotropic prior per node.

    Args:
        anchors: N x 2 surveyed anchor positions (the anchor prior means)
        listener_mean: Listener prior mean, the anchor centroid when None
        anchor_std: Standard deviation of each anchor coordinate in metres
        listener_std: Standard deviation of each listener coordinate in metres
    """
    anchors = np.asarray(anchors, dtype=float)
    if anchor_std <= 0 or listener_std <= 0:
        raise ValueError("prior standard deviations must be > 0")
    if listener_mean is None:
        listener_mean = anchors.mean(axis=0)
    mean = np.concatenate([anchors.reshape(-1), np.asarray(listener_mean, dtype=float)])
    variances = np.full(mean.size, anchor_std**2)
    variances[-2:] = listener_std**2
    return Prior(mean, np.diag(variances))


#########################################################################################
# Model
#########################################################################################


def range_jacobian(x: np.ndarray, n_anchors: int) -> np.ndarray:
    """
    Jacobian of the canonical range vector g(x) with respect to x.

    Args:
        x: Stacked positions [x1, y1, ..., xN, yN, xL, yL]
        n_anchors: N

    Returns:
        (N(N-1)/2 + N) x 2(N+1) matrix of unit direction vectors

    Raises:
        ValueError: If two nodes coincide
    """
    positions = np.asarray(x, dtype=float).reshape(n_anchors + 1, 2)
    anchors, listener = positions[:-1], positions[-1]
    first, second = np.triu_indices(n_anchors, k=1)
    n_pairs = first.size

    pair_diff = anchors[first] - anchors[second]
    listener_diff = listener - anchors
    diff = np.vstack([pair_diff, listener_diff])
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist <= ZERO_RANGE_TOLERANCE):
        raise ValueError("zero range: two nodes coincide")
    unit = diff / dist[:, None]

    jacobian = np.zeros((n_pairs + n_anchors, 2 * (n_anchors + 1)))
    pair_rows = np.arange(n_pairs)
    for axis in (0, 1):
        jacobian[pair_rows, 2 * first + axis] = unit[:n_pairs, axis]
        jacobian[pair_rows, 2 * second + axis] = -unit[:n_pairs, axis]

    listener_rows = n_pairs + np.arange(n_anchors)
    for axis in (0, 1):
        jacobian[listener_rows, 2 * n_anchors + axis] = unit[n_pairs:, axis]
        jacobian[listener_rows, 2 * np.arange(n_anchors) + axis] = -unit[n_pairs:, axis]
    return jacobian


def stacked_schedule_matrix(s_matrix: np.ndarray, n_rows: int) -> np.ndarray:
    """S repeated once per pooled batch so that it has n_rows rows."""
    n_measurements = s_matrix.shape[0]
    if n_rows <= 0 or n_rows % n_measurements:
        raise ValueError(
            f"dimension mismatch: {n_rows} timings are not whole batches of {n_measurements}"
        )
    return np.tile(s_matrix, (n_rows // n_measurements, 1))


class _MapProblem:
    """Cost, gradient and Gauss-Newton model of one fix."""

    def __init__(
        self,
        y_cal: np.ndarray,
        d_vec: np.ndarray,
        matrices: ScheduleMatrices,
        prior: Prior,
    ) -> None:
        y_cal = np.asarray(y_cal, dtype=float).reshape(-1)
        d_vec = np.asarray(d_vec, dtype=float).reshape(-1)
        if y_cal.shape != d_vec.shape:
            raise ValueError(
                f"dimension mismatch: {y_cal.size} timings, {d_vec.size} delays"
            )
        if prior.n_anchors != matrices.n_anchors:
            raise ValueError(
                f"dimension mismatch: prior for {prior.n_anchors} anchors, "
                f"schedule for {matrices.n_anchors}"
            )
        self.n_anchors = matrices.n_anchors
        self.target = y_cal - d_vec
        self.s_stack = stacked_schedule_matrix(matrices.S, y_cal.size)
        self.beta = 1.0 / (y_cal.size + 2)
        self.prior = prior

    def residual(self, x: np.ndarray) -> np.ndarray:
        ranges = ranges_from_positions(x.reshape(-1, 2))
        return self.target - self.s_stack @ ranges / SPEED_OF_LIGHT

    def residual_jacobian(self, x: np.ndarray) -> np.ndarray:
        return -(self.s_stack @ range_jacobian(x, self.n_anchors)) / SPEED_OF_LIGHT

    def prior_term(self, x: np.ndarray) -> np.ndarray:
        return self.prior.information @ (x - self.prior.mean)

    def cost(self, x: np.ndarray) -> float:
        residual = self.residual(x)
        squared = max(float(residual @ residual), RESIDUAL_FLOOR)
        offset = x - self.prior.mean
        return 0.5 * np.log(squared) + 0.5 * self.beta * float(offset @ self.prior_term(x))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gradient_and_hessian(x)[0]

    def gradient_and_hessian(self, x: np.ndarray):
        residual = self.residual(x)
        jacobian = self.residual_jacobian(x)
        squared = max(float(residual @ residual), RESIDUAL_FLOOR)
        gradient = jacobian.T @ residual / squared + self.beta * self.prior_term(x)
        hessian = jacobian.T @ jacobian / squared + self.beta * self.prior.information
        return gradient, hessian


def map_cost(
    x: np.ndarray,
    y_cal: np.ndarray,
    d_vec: np.ndarray,
    matrices: ScheduleMatrices,
    prior: Prior,
) -> float:
    """V(x) for calibrated timings of one or more pooled batches."""
    return _MapProblem(y_cal, d_vec, matrices, prior).cost(np.asarray(x, dtype=float))


def map_gradient(
    x: np.ndarray,
    y_cal: np.ndarray,
    d_vec: np.ndarray,
    matrices: ScheduleMatrices,
    prior: Prior,
) -> np.ndarray:
    """Analytic gradient of V(x)."""
    return _MapProblem(y_cal, d_vec, matrices, prior).gradient(np.asarray(x, dtype=float))


#########################################################################################
# Estimator
#########################################################################################


@dataclass(frozen=True)
class PositionEstimate:
    """
    Attributes:
        x_hat: Estimated listener position
        positions: Estimated (N+1) x 2 node positions, listener last
        cost: V at the estimate
        iterations: Gauss-Newton iterations taken
        converged: Whether the gradient test passed at the estimate
        gradient_norm: |grad V| at the estimate
        newton_step_norm: Length of the Gauss-Newton step left at the estimate
    """

    x_hat: np.ndarray
    positions: np.ndarray
    cost: float
    iterations: int
    converged: bool
    gradient_norm: float = float("nan")
    newton_step_norm: float = float("nan")

    def to_record(self) -> Dict[str, Any]:
        return {
            "x_hat": self.x_hat.tolist(),
            "anchors": self.positions[:-1].tolist(),
            "cost": self.cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
        }


def _newton_step(gradient: np.ndarray, hessian: np.ndarray) -> Optional[np.ndarray]:
    """Gauss-Newton step, None when the model gives no descent direction."""
    try:
        step = -np.linalg.solve(hessian, gradient)
    except np.linalg.LinAlgError:
        return None
    slope = float(gradient @ step)
    if not np.isfinite(slope) or slope >= 0:
        return None
    return step


def _is_stationary(gradient: np.ndarray, newton_step: Optional[np.ndarray]) -> bool:
    """
    Gradient test of the estimator.

    Passes when |grad V| is below MAP_GRADIENT_TOLERANCE or when the
    gradient, measured in the Gauss-Newton metric, moves the estimate by
    less than MAP_STEP_TOLERANCE. The second form is what ends noise-free
    fits, where the log cost keeps |grad V| large right up to the truth.
    """
    if np.linalg.norm(gradient) < MAP_GRADIENT_TOLERANCE:
        return True
    return newton_step is not None and np.linalg.norm(newton_step) < MAP_STEP_TOLERANCE


def map_estimate(
    y_cal: np.ndarray,
    d_vec: np.ndarray,
    matrices: ScheduleMatrices,
    prior: Prior,
    init: Optional[np.ndarray] = None,
    max_iterations: int = MAP_MAX_ITERATIONS,
) -> PositionEstimate:
    """
    Minimize V with damped Gauss-Newton steps and an Armijo line search.

    Args:
        y_cal: Calibrated timings, M per pooled batch
        d_vec: Delays subtracted from each timing
        matrices: Matrices of the schedule
        prior: Position prior
        init: Starting point, the prior mean when None
        max_iterations: Iteration cap

    Returns:
        PositionEstimate with converged=True only when the gradient test
        passes at the returned estimate. Hitting the cap or a stalled line
        search returns the best iterate with converged=False.
    """
    problem = _MapProblem(y_cal, d_vec, matrices, prior)
    x = np.array(prior.mean if init is None else init, dtype=float)
    if x.shape != prior.mean.shape:
        raise ValueError(f"dimension mismatch: init has shape {x.shape}")

    cost = problem.cost(x)
    converged = False
    stalled = False
    iteration = 0
    while True:
        gradient, hessian = problem.gradient_and_hessian(x)
        newton = _newton_step(gradient, hessian)
        if _is_stationary(gradient, newton):
            converged = True
            break
        if iteration >= max_iterations:
            break
        iteration += 1

        step = -gradient if newton is None else newton
        slope = float(gradient @ step)
        fraction = 1.0
        while fraction >= MAP_MIN_STEP_FRACTION:
            candidate = x + fraction * step
            candidate_cost = problem.cost(candidate)
            if candidate_cost <= cost + MAP_ARMIJO_C1 * fraction * slope:
                break
            fraction *= MAP_BACKTRACK_FACTOR
        else:
            stalled = True
            break
        x, cost = candidate, candidate_cost

    if stalled:
        logging.warning(
            "MAP line search stalled after %d iterations (|grad V| %.3e)",
            iteration,
            np.linalg.norm(gradient),
        )
    elif not converged:
        logging.warning("MAP estimate did not converge after %d iterations", iteration)

    positions = x.reshape(-1, 2)
    return PositionEstimate(
        x_hat=positions[-1].copy(),
        positions=positions.copy(),
        cost=float(cost),
        iterations=iteration,
        converged=converged,
        gradient_norm=float(np.linalg.norm(gradient)),
        newton_step_norm=float("inf") if newton is None else float(np.linalg.norm(newton)),
    )
