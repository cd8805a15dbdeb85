"""
Recursive least-squares estimation of the relative skews theta.

Observations are d_n = G^T theta + noise, one per schedule pass. The state
stores `p_inv`, the inverse covariance (information matrix) of the
estimate. Inputs are whitened by a scalar noise
scale before they enter the recursion, so the diffuse prior P_0 = 1e6 I is
diffuse relative to the data and not to the unit of seconds.

The information-form update

    P^-1_{n+1} = P^-1_n + G G^T
    K          = P_{n+1} G
    theta_{n+1} = theta_n + K (d_n - G^T theta_n)

is the textbook covariance recursion K = P_n G (I + G^T P_n G)^-1 rewritten
with the matrix inversion lemma; it does not lose the small covariances to
cancellation after the first, very informative update.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..config import (
    DEFAULT_SIGMA,
    RLS_CONDITION_LIMIT,
    RLS_INITIAL_COVARIANCE,
    RLS_REGULARIZATION,
)


@dataclass(frozen=True)
class RlsState:
    """
    Attributes:
        theta_hat: Current relative-skew estimate (dimensionless)
        p_inv: N x N information matrix in whitened units
        n_updates: Number of observations absorbed
        noise_scale: Whitening scale in seconds
    """

    theta_hat: np.ndarray
    p_inv: np.ndarray
    n_updates: int = 0
    noise_scale: float = DEFAULT_SIGMA

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_hat, dtype=float)
        p_inv = np.asarray(self.p_inv, dtype=float)
        if p_inv.shape != (theta.size, theta.size):
            raise ValueError(f"p_inv must be {theta.size}x{theta.size}, got {p_inv.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta_hat must be finite")
        if self.n_updates < 0:
            raise ValueError("n_updates must be >= 0")
        if self.noise_scale <= 0:
            raise ValueError(f"noise_scale must be > 0, got {self.noise_scale}")
        # Keep exact symmetry; the recursion only ever adds symmetric terms
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "p_inv", 0.5 * (p_inv + p_inv.T))

    @property
    def n_params(self) -> int:
        return self.theta_hat.size

    @property
    def covariance(self) -> np.ndarray:
        """Estimate covariance P (dimensionless, assuming unit whitened noise)."""
        return _information_solve(self.p_inv, np.eye(self.n_params))

    @property
    def trace_p(self) -> float:
        return float(np.trace(self.covariance))

    def trace_record(self) -> List[float]:
        """One row of the convergence trace: n, theta_hat_1..N, trace_P."""
        return [self.n_updates, *self.theta_hat.tolist(), self.trace_p]


def init_rls(
    n_anchors: int,
    noise_scale: float = DEFAULT_SIGMA,
    initial_covariance: float = RLS_INITIAL_COVARIANCE,
) -> RlsState:
    """theta_0 = 0, P_0 = initial_covariance * I."""
    return RlsState(
        theta_hat=np.zeros(n_anchors),
        p_inv=np.eye(n_anchors) / initial_covariance,
        n_updates=0,
        noise_scale=noise_scale,
    )


def _information_solve(p_inv: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve P^-1 X = rhs, regularizing ill-conditioned information."""
    matrix = p_inv
    if np.linalg.cond(matrix) > RLS_CONDITION_LIMIT:
        loading = RLS_REGULARIZATION * np.trace(matrix) / matrix.shape[0]
        logging.debug("Regularizing RLS information matrix by %.3e", loading)
        matrix = matrix + loading * np.eye(matrix.shape[0])
    try:
        return cho_solve(cho_factor(matrix), rhs)
    except LinAlgError:
        logging.debug("Cholesky failed on RLS information matrix, using lstsq")
        return np.linalg.lstsq(matrix, rhs, rcond=None)[0]


def _check_dimensions(state: RlsState, g_matrix: np.ndarray, d_n: np.ndarray) -> None:
    if g_matrix.ndim != 2 or g_matrix.shape[0] != state.n_params:
        raise ValueError(
            f"dimension mismatch: G is {g_matrix.shape}, state has {state.n_params} skews"
        )
    if d_n.shape != (g_matrix.shape[1],):
        raise ValueError(
            f"dimension mismatch: d_n has shape {d_n.shape}, G^T has {g_matrix.shape[1]} rows"
        )


def rls_gain(state: RlsState, g_matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gain and next information matrix for one update with system matrix G.

    Both depend on G only, never on the data.

    Returns:
        (K, p_inv_next): K maps whitened innovations onto theta
    """
    whitened = np.asarray(g_matrix, dtype=float) / state.noise_scale
    p_inv_next = state.p_inv + whitened @ whitened.T
    gain = _information_solve(p_inv_next, whitened)
    return gain, p_inv_next


def rls_update_with_gain(
    state: RlsState,
    g_matrix: np.ndarray,
    d_n: np.ndarray,
    gain: np.ndarray,
    p_inv_next: np.ndarray,
) -> RlsState:
    """Apply one update with a gain computed beforehand (see precompute_gains)."""
    g_matrix = np.asarray(g_matrix, dtype=float)
    d_n = np.asarray(d_n, dtype=float)
    _check_dimensions(state, g_matrix, d_n)

    prediction = g_matrix.T @ state.theta_hat
    innovation = (d_n - prediction) / state.noise_scale
    return RlsState(
        theta_hat=state.theta_hat + gain @ innovation,
        p_inv=p_inv_next,
        n_updates=state.n_updates + 1,
        noise_scale=state.noise_scale,
    )


def rls_update(state: RlsState, g_matrix: np.ndarray, d_n: np.ndarray) -> RlsState:
    """
    Absorb one skew-residual observation d_n = G^T theta + noise.

    Args:
        state: Previous estimate
        g_matrix: N x N(N-1)/2 skew mapping of this batch
        d_n: N(N-1)/2 residual observation in seconds

    Returns:
        The updated state (the input state is not modified)
    """
    g_matrix = np.asarray(g_matrix, dtype=float)
    d_n = np.asarray(d_n, dtype=float)
    _check_dimensions(state, g_matrix, d_n)
    gain, p_inv_next = rls_gain(state, g_matrix)
    return rls_update_with_gain(state, g_matrix, d_n, gain, p_inv_next)


def precompute_gains(
    state: RlsState, g_matrix: np.ndarray, n_steps: int
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Offline gain sequence for a fixed G.

    Returns:
        n_steps pairs (K_n, p_inv_{n+1}) to feed rls_update_with_gain in order
    """
    gains = []
    current = state
    for _ in range(n_steps):
        gain, p_inv_next = rls_gain(current, g_matrix)
        gains.append((gain, p_inv_next))
        current = RlsState(
            current.theta_hat, p_inv_next, current.n_updates + 1, current.noise_scale
        )
    return gains


def stacked_least_squares(
    g_matrices: Sequence[np.ndarray], observations: Sequence[np.ndarray]
) -> np.ndarray:
    """
    Batch least squares over stacked observations d_n = G_n^T theta.

    Solves the normal equations (sum G_n G_n^T) theta = sum G_n d_n.
    """
    if len(g_matrices) != len(observations) or not g_matrices:
        raise ValueError("need one observation per G and at least one of each")
    normal = sum(np.asarray(g) @ np.asarray(g).T for g in g_matrices)
    right = sum(np.asarray(g) @ np.asarray(d) for g, d in zip(g_matrices, observations))
    return np.linalg.solve(normal, right)
