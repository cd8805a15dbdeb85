import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy.stats import chi2

from ..config import DEFAULT_CONFIDENCE, EIGENVALUE_TOLERANCE, SPEED_OF_LIGHT
from ..schedule import ScheduleMatrices
from .map import Prior, range_jacobian

# Inverting J beyond this condition number yields meaningless bounds
_UNOBSERVABLE_CONDITION = 1e15


#########################################################################################
# Bounds
#########################################################################################


def fisher_information(
    x: np.ndarray,
    matrices: ScheduleMatrices,
    sigma: float,
    prior: Optional[Prior] = None,
    n_stack: int = 1,
    variance_gradient: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Information about the stacked positions carried by n_stack batches.

    J = (n_stack / (c sigma)^2) J_g^T S^T S J_g + Pr^-1, where J_g is the
    range Jacobian at x. A position-dependent noise variance adds
    (M / (2 sigma^4)) dsigma2 dsigma2^T.

    Args:
        x: Stacked positions where the bound is evaluated
        matrices: Matrices of the schedule
        sigma: Measurement noise standard deviation in seconds
        prior: Position prior; data information only when None
        n_stack: Number of pooled batches
        variance_gradient: Gradient of sigma^2 with respect to x, if any

    Returns:
        2(N+1) x 2(N+1) Fisher information matrix
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if n_stack < 1:
        raise ValueError(f"n_stack must be >= 1, got {n_stack}")

    projected = matrices.S @ range_jacobian(x, matrices.n_anchors)
    information = n_stack * projected.T @ projected / (SPEED_OF_LIGHT * sigma) ** 2

    if variance_gradient is not None:
        variance_gradient = np.asarray(variance_gradient, dtype=float)
        n_measurements = n_stack * matrices.n_measurements
        information = information + (
            n_measurements / (2.0 * sigma**4)
        ) * np.outer(variance_gradient, variance_gradient)

    if prior is not None:
        information = information + prior.information
    return information


def hybrid_crb(information: np.ndarray) -> np.ndarray:
    """
    Invert the hybrid information matrix.

    Raises:
        ValueError: If the geometry is unobservable (J singular)
    """
    information = np.asarray(information, dtype=float)
    if np.linalg.cond(information) > _UNOBSERVABLE_CONDITION:
        raise ValueError("geometry unobservable: information matrix is singular")
    try:
        bound = np.linalg.inv(information)
    except np.linalg.LinAlgError as err:
        raise ValueError("geometry unobservable: information matrix is singular") from err
    return 0.5 * (bound + bound.T)


def listener_block(matrix: np.ndarray) -> np.ndarray:
    """The listener's 2x2 block of a stacked-position matrix."""
    return np.asarray(matrix)[-2:, -2:]


def listener_bound(
    x: np.ndarray,
    matrices: ScheduleMatrices,
    sigma: float,
    prior: Prior,
    n_stack: int = 1,
) -> np.ndarray:
    """HCRB of the listener position for a fix pooling n_stack batches."""
    information = fisher_information(x, matrices, sigma, prior, n_stack)
    return listener_block(hybrid_crb(information))


#########################################################################################
# Error Ellipses
#########################################################################################


def confidence_scale(confidence: float) -> float:
    """Chi-square quantile with 2 degrees of freedom, -2 ln(1 - p)."""
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    return float(chi2.ppf(confidence, df=2))


@dataclass(frozen=True)
class ErrorEllipse:
    """
    Attributes:
        center: Ellipse center in metres
        semi_axes: (a, b) with a >= b > 0, in metres
        orientation: Angle of the major axis in radians, in (-pi/2, pi/2]
        confidence: Probability mass enclosed
    """

    center: np.ndarray
    semi_axes: tuple
    orientation: float
    confidence: float

    def __post_init__(self) -> None:
        major, minor = self.semi_axes
        if not major >= minor > 0:
            raise ValueError(f"semi-axes must satisfy a >= b > 0, got {self.semi_axes}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def area(self) -> float:
        return float(np.pi * self.semi_axes[0] * self.semi_axes[1])

    def to_record(self, kind: str) -> Dict[str, Any]:
        return {
            "kind": kind,
            "center": self.center.tolist(),
            "semi_axes": [float(axis) for axis in self.semi_axes],
            "orientation_rad": float(self.orientation),
            "confidence": float(self.confidence),
        }


def error_ellipse(
    cov: np.ndarray,
    center: Sequence[float],
    confidence: float = DEFAULT_CONFIDENCE,
) -> ErrorEllipse:
    """
    Confidence ellipse of a 2x2 covariance.

    Semi-axes are sqrt(lambda_i q) with q the 2-dof chi-square quantile; the
    orientation follows the principal eigenvector.

    Raises:
        ValueError: If cov is not 2x2 or has a negative or zero eigenvalue
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise ValueError(f"covariance must be 2x2, got {cov.shape}")
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (cov + cov.T))
    if eigenvalues[0] < -EIGENVALUE_TOLERANCE:
        raise ValueError(f"covariance has a negative eigenvalue {eigenvalues[0]:.3e}")
    if eigenvalues[0] <= 0:
        raise ValueError("covariance is degenerate")

    # eigh sorts ascending
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    principal = eigenvectors[:, order[0]]

    orientation = float(np.arctan2(principal[1], principal[0]))
    if orientation > np.pi / 2:
        orientation -= np.pi
    elif orientation <= -np.pi / 2:
        orientation += np.pi

    scale = confidence_scale(confidence)
    semi_axes = tuple(float(np.sqrt(value * scale)) for value in eigenvalues)
    return ErrorEllipse(center, semi_axes, orientation, confidence)


def ellipse_from_samples(
    points: np.ndarray,
    confidence: float = DEFAULT_CONFIDENCE,
    center: Optional[Sequence[float]] = None,
) -> ErrorEllipse:
    """
    Ellipse of the sample covariance of a point cloud.

    Args:
        points: K x 2 position estimates
        confidence: Probability mass enclosed
        center: Ellipse center, the sample mean when None
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 3:
        raise ValueError("need at least three planar samples")
    mean = points.mean(axis=0)
    logging.debug("Sample ellipse from %d points around %s", len(points), mean)
    return error_ellipse(
        np.cov(points, rowvar=False), mean if center is None else center, confidence
    )
