import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..config import RANK_TOLERANCE
from ..models import (
    anchor_pair_column,
    listener_column,
    n_anchor_pairs,
    n_range_columns,
)


#########################################################################################
# Schedule
#########################################################################################


@dataclass(frozen=True)
class Schedule:
    """
    A-priori transmission order of the anchors.

    Every consecutive pair (order[k], order[k+1]) yields one listener
    measurement, so a schedule of length M+1 produces M measurements. The
    delay entering measurement k is generated by order[k+1], which waits
    nominal_delay after hearing order[k] before transmitting.

    Attributes:
        order: 1-based anchor ids in transmission order
        nominal_delay: The known inter-transmission delay delta in seconds
    """

    order: Tuple[int, ...]
    nominal_delay: float

    def __post_init__(self) -> None:
        order = tuple(int(node) for node in self.order)
        object.__setattr__(self, "order", order)

        if len(order) < 2:
            raise ValueError("a schedule needs at least two transmissions")
        if any(node < 1 for node in order):
            raise ValueError(f"anchor ids are 1-based, got {order}")
        for position, (current, following) in enumerate(zip(order, order[1:])):
            if current == following:
                raise ValueError(
                    f"repeated consecutive sender {current} at position {position + 1}"
                )
        if not np.isfinite(self.nominal_delay) or self.nominal_delay <= 0:
            raise ValueError(f"nominal_delay must be > 0, got {self.nominal_delay}")

    @property
    def n_measurements(self) -> int:
        return len(self.order) - 1

    @property
    def pairs(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(zip(self.order, self.order[1:]))

    @property
    def delay_holders(self) -> Tuple[int, ...]:
        """Node whose generated delay appears in each measurement (order[k+1])."""
        return self.order[1:]

    def nominal_delays(self) -> np.ndarray:
        """D = delta * 1."""
        return np.full(self.n_measurements, self.nominal_delay)

    def check_coverage(self, n_anchors: int) -> None:
        """
        Ensure the schedule only uses anchors 1..N and every one of them.

        Raises:
            ValueError: If an id is out of range or an anchor never transmits
        """
        unknown = sorted(set(self.order) - set(range(1, n_anchors + 1)))
        if unknown:
            raise ValueError(f"schedule uses unknown anchors {unknown} (N = {n_anchors})")
        silent = sorted(set(range(1, n_anchors + 1)) - set(self.order))
        if silent:
            raise ValueError(f"anchors {silent} never transmit in the schedule")


def minimal_schedule_length(n_anchors: int) -> int:
    """M of a minimal valid schedule, N(N-1)/2 + N - 1."""
    return n_range_columns(n_anchors) - 1


#########################################################################################
# Matrices
#########################################################################################


def build_s_matrix(schedule: Schedule, n_anchors: int) -> np.ndarray:
    """
    Map the canonical range vector onto the schedule's time differences.

    Row k (pair i -> j) holds +1 at rho_ij, -1 at rho_iL and +1 at rho_jL.

    Args:
        schedule: Transmission order
        n_anchors: Number of anchors N

    Returns:
        M x (N(N-1)/2 + N) matrix S

    Raises:
        ValueError: If the schedule refers to anchors outside 1..N
    """
    if n_anchors < 3:
        raise ValueError(f"N ≥ 3 required, got {n_anchors}")
    if max(schedule.order) > n_anchors:
        raise ValueError(
            f"schedule uses anchor {max(schedule.order)} but only {n_anchors} exist"
        )

    s_matrix = np.zeros((schedule.n_measurements, n_range_columns(n_anchors)))
    for row, (i, j) in enumerate(schedule.pairs):
        s_matrix[row, anchor_pair_column(i, j, n_anchors)] = 1.0
        s_matrix[row, listener_column(i, n_anchors)] = -1.0
        s_matrix[row, listener_column(j, n_anchors)] = 1.0
    return s_matrix


def kernel_vector(n_anchors: int) -> np.ndarray:
    """u = [0, ..., 0, 1, ..., 1]: a common offset on every listener range."""
    u = np.zeros(n_range_columns(n_anchors))
    u[n_anchor_pairs(n_anchors) :] = 1.0
    return u


def build_projector(n_anchors: int) -> np.ndarray:
    """Pi: identity on the anchor-pair block, zero on the listener block."""
    if n_anchors < 3:
        raise ValueError(f"N ≥ 3 required, got {n_anchors}")
    diagonal = np.zeros(n_range_columns(n_anchors))
    diagonal[: n_anchor_pairs(n_anchors)] = 1.0
    return np.diag(diagonal)


def anchor_block_selector(n_anchors: int) -> np.ndarray:
    """Pi' : the nonzero rows of Pi, mapping R^(P+N) onto R^P."""
    return np.eye(n_range_columns(n_anchors))[: n_anchor_pairs(n_anchors)]


def pseudoinverse(s_matrix: np.ndarray) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse through the SVD.

    Singular values at or below max(dim) * eps * sigma_max are treated as zero.
    """
    s_matrix = np.asarray(s_matrix, dtype=float)
    u, singular_values, vt = np.linalg.svd(s_matrix, full_matrices=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        return np.zeros(s_matrix.T.shape)
    cutoff = max(s_matrix.shape) * np.finfo(float).eps * singular_values[0]
    inverted = np.zeros_like(singular_values)
    keep = singular_values > cutoff
    inverted[keep] = 1.0 / singular_values[keep]
    return (vt.T * inverted) @ u.T


class ScheduleDiagnosis(NamedTuple):
    valid: bool
    kernel_dim: int
    rank: int


def validate_schedule(s_matrix: np.ndarray, n_anchors: int) -> ScheduleDiagnosis:
    """
    Diagnose whether a schedule identifies every anchor-anchor range.

    The schedule is valid iff ker S is one-dimensional and spanned by u.

    Returns:
        ScheduleDiagnosis(valid, kernel_dim, rank)
    """
    s_matrix = np.asarray(s_matrix, dtype=float)
    n_columns = n_range_columns(n_anchors)
    if s_matrix.ndim != 2 or s_matrix.shape[1] != n_columns:
        logging.debug("S has shape %s, expected %d columns", s_matrix.shape, n_columns)
        return ScheduleDiagnosis(False, n_columns, 0)

    singular_values = np.linalg.svd(s_matrix, compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        return ScheduleDiagnosis(False, n_columns, 0)
    rank = int(np.sum(singular_values > RANK_TOLERANCE * singular_values[0]))
    kernel_dim = n_columns - rank

    # Entries are +-1 so S u is exact in floating point
    u_in_kernel = not np.any(s_matrix @ kernel_vector(n_anchors))
    valid = kernel_dim == 1 and u_in_kernel

    if not valid:
        logging.debug("Schedule invalid: rank %d, kernel dimension %d", rank, kernel_dim)
    return ScheduleDiagnosis(valid, kernel_dim, rank)


def sender_selection(schedule: Schedule, n_anchors: int) -> np.ndarray:
    """A: M x N with A[k, order[k+1]] = 1, selecting the delay holder per row."""
    selection = np.zeros((schedule.n_measurements, n_anchors))
    for row, holder in enumerate(schedule.delay_holders):
        selection[row, holder - 1] = 1.0
    return selection


@dataclass(frozen=True)
class ScheduleMatrices:
    """
    Precomputed linear algebra of one schedule.

    Attributes:
        schedule: The schedule these matrices belong to
        n_anchors: N
        S: M x (P+N) schedule matrix, P = N(N-1)/2
        S_pinv: (P+N) x M pseudoinverse of S
        Pi: (P+N) x (P+N) anchor-block projector
        u: Kernel vector of S
        A: M x N delay-holder selection
        anchor_pinv: Pi' S+, the P x M operator shared by every G
        G: N x P skew mapping for the nominal delays
    """

    schedule: Schedule
    n_anchors: int
    S: np.ndarray
    S_pinv: np.ndarray
    Pi: np.ndarray
    u: np.ndarray
    A: np.ndarray
    anchor_pinv: np.ndarray
    G: Optional[np.ndarray] = None

    @property
    def n_measurements(self) -> int:
        return self.S.shape[0]

    @property
    def n_pairs(self) -> int:
        return n_anchor_pairs(self.n_anchors)


def build_schedule_matrices(schedule: Schedule, n_anchors: int) -> ScheduleMatrices:
    """
    Build and validate every matrix a schedule needs.

    Raises:
        ValueError: If the schedule does not identify the anchor ranges
    """
    s_matrix = build_s_matrix(schedule, n_anchors)
    diagnosis = validate_schedule(s_matrix, n_anchors)
    if not diagnosis.valid:
        raise ValueError(
            f"invalid schedule {list(schedule.order)}: kernel dimension "
            f"{diagnosis.kernel_dim} (must be 1)"
        )

    s_pinv = pseudoinverse(s_matrix)
    anchor_pinv = anchor_block_selector(n_anchors) @ s_pinv
    matrices = ScheduleMatrices(
        schedule=schedule,
        n_anchors=n_anchors,
        S=s_matrix,
        S_pinv=s_pinv,
        Pi=build_projector(n_anchors),
        u=kernel_vector(n_anchors),
        A=sender_selection(schedule, n_anchors),
        anchor_pinv=anchor_pinv,
    )
    g_matrix = build_g_matrix(matrices, schedule, schedule.nominal_delays())
    for array in (s_matrix, s_pinv, matrices.Pi, matrices.u, matrices.A, anchor_pinv, g_matrix):
        array.setflags(write=False)
    object.__setattr__(matrices, "G", g_matrix)

    logging.debug(
        "Built matrices for schedule %s: S %s, rank %d",
        list(schedule.order),
        s_matrix.shape,
        diagnosis.rank,
    )
    return matrices


def build_g_matrix(
    matrices: ScheduleMatrices, schedule: Schedule, delays: Sequence[float]
) -> np.ndarray:
    """
    Skew mapping G with G^T theta = Pi' S+ Diag(delays) A theta.

    Pi' S+ is taken from the cache, so per-batch delays only cost the
    Diag(delays) A product.

    Args:
        matrices: Precomputed schedule matrices
        schedule: The schedule the delays belong to
        delays: Generated delay per measurement (delta * 1 when nominal)

    Returns:
        N x N(N-1)/2 matrix G

    Raises:
        ValueError: On dimension mismatch
    """
    delays = np.asarray(delays, dtype=float)
    if schedule.order != matrices.schedule.order:
        raise ValueError("dimension mismatch: delays belong to another schedule")
    if delays.shape != (matrices.n_measurements,):
        raise ValueError(
            f"dimension mismatch: {delays.shape[0] if delays.ndim else 0} delays "
            f"for {matrices.n_measurements} measurements"
        )
    g_transposed = matrices.anchor_pinv @ (delays[:, None] * matrices.A)
    return g_transposed.T
