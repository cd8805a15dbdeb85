import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import SKEW_SANITY_BOUND, ZERO_RANGE_TOLERANCE


#########################################################################################
# Errors
#########################################################################################


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


class DataError(ValueError):
    """Malformed or inconsistent measurement input (CLI exit code 2)."""


class AcceptanceFailure(RuntimeError):
    """A reproduction run missed one of its acceptance thresholds (exit code 3)."""


#########################################################################################
# Helpers
#########################################################################################

ANCHOR = "anchor"
LISTENER = "listener"


def _frozen_array(values, shape_hint: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{shape_hint} must be finite")
    array.setflags(write=False)
    return array


def n_anchor_pairs(n_anchors: int) -> int:
    """Number of anchor-anchor ranges, N(N-1)/2."""
    return n_anchors * (n_anchors - 1) // 2


def n_range_columns(n_anchors: int) -> int:
    """Length of the canonical range vector, N(N-1)/2 + N."""
    return n_anchor_pairs(n_anchors) + n_anchors


def anchor_pair_column(i: int, j: int, n_anchors: int) -> int:
    """
    Column of rho_ij in the canonical range vector.

    Anchor ids are 1-based and unordered: (i, j) and (j, i) share a column.
    Pairs are ordered lexicographically: rho_12, rho_13, ..., rho_{N-1,N}.
    """
    if i == j:
        raise ValueError(f"no range between anchor {i} and itself")
    low, high = min(i, j), max(i, j)
    if low < 1 or high > n_anchors:
        raise ValueError(f"anchor pair ({i}, {j}) outside 1..{n_anchors}")
    # Columns taken by all pairs starting below `low`
    before = (low - 1) * n_anchors - (low - 1) * low // 2
    return before + (high - low - 1)


def listener_column(i: int, n_anchors: int) -> int:
    """Column of rho_Li in the canonical range vector."""
    if not 1 <= i <= n_anchors:
        raise ValueError(f"anchor {i} outside 1..{n_anchors}")
    return n_anchor_pairs(n_anchors) + i - 1


def canonical_range_labels(n_anchors: int) -> List[str]:
    """Human-readable labels of the canonical ordering (rho_12, ..., rho_LN)."""
    *anchors, listener = network_node_ids(n_anchors)
    labels = [f"rho_{first}{second}" for first, second in itertools.combinations(anchors, 2)]
    labels.extend(f"rho_{listener}{anchor}" for anchor in anchors)
    return labels


def ranges_from_positions(positions: np.ndarray) -> np.ndarray:
    """
    The map g(x) from node positions onto the canonical range vector.

    Args:
        positions: (N+1) x 2 array, anchors 1..N first, the listener last

    Returns:
        Vector of N(N-1)/2 anchor-anchor ranges followed by N listener ranges
    """
    positions = np.asarray(positions, dtype=float)
    anchors = positions[:-1]
    listener = positions[-1]
    first, second = np.triu_indices(len(anchors), k=1)
    pair_ranges = np.linalg.norm(anchors[first] - anchors[second], axis=1)
    listener_ranges = np.linalg.norm(anchors - listener, axis=1)
    return np.concatenate([pair_ranges, listener_ranges])


#########################################################################################
# Domain Types
#########################################################################################


@dataclass(frozen=True)
class NodeId:
    """A node of the network: anchors are numbered 1..N, the listener is 'L'."""

    index: int
    role: str = ANCHOR

    def __post_init__(self) -> None:
        if self.role not in (ANCHOR, LISTENER):
            raise ValueError(f"Unknown node role: {self.role}")
        if self.index < 1:
            raise ValueError(f"Node index must be >= 1, got {self.index}")

    def __str__(self) -> str:
        return "L" if self.role == LISTENER else str(self.index)


def network_node_ids(n_anchors: int) -> List[NodeId]:
    """Anchors 1..N followed by the listener."""
    ids = [NodeId(i) for i in range(1, n_anchors + 1)]
    ids.append(NodeId(n_anchors + 1, LISTENER))
    return ids


@dataclass(frozen=True)
class NetworkGeometry:
    """
    Anchor coordinates plus the (possibly unknown) listener position.

    Attributes:
        anchors: N x 2 anchor coordinates in metres
        listener_true: Listener coordinate in metres, None when ingesting
            real data where it is unknown
    """

    anchors: np.ndarray
    listener_true: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        anchors = _frozen_array(self.anchors, "anchor coordinates")
        if anchors.ndim != 2 or anchors.shape[1] != 2:
            raise ValueError("anchors must be an N x 2 array of planar coordinates")
        if anchors.shape[0] < 3:
            raise ValueError(f"N ≥ 3 required, got {anchors.shape[0]} anchors")

        centered = anchors - anchors.mean(axis=0)
        singular_values = np.linalg.svd(centered, compute_uv=False)
        if singular_values[1] <= 1e-9 * singular_values[0]:
            raise ValueError("anchors are collinear; planar localization is unsolvable")
        object.__setattr__(self, "anchors", anchors)

        if self.listener_true is not None:
            listener = _frozen_array(self.listener_true, "listener coordinate")
            if listener.shape != (2,):
                raise ValueError("listener_true must be a planar coordinate")
            object.__setattr__(self, "listener_true", listener)

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def node_ids(self) -> List[NodeId]:
        return network_node_ids(self.n_anchors)

    def with_listener(self, listener: Sequence[float]) -> "NetworkGeometry":
        return NetworkGeometry(self.anchors, np.asarray(listener, dtype=float))

    def with_anchors(self, anchors: np.ndarray) -> "NetworkGeometry":
        return NetworkGeometry(np.asarray(anchors, dtype=float), self.listener_true)

    def translated(self, offset: Sequence[float]) -> "NetworkGeometry":
        offset = np.asarray(offset, dtype=float)
        listener = None if self.listener_true is None else self.listener_true + offset
        return NetworkGeometry(self.anchors + offset, listener)

    def positions(self) -> np.ndarray:
        """(N+1) x 2 array of all node positions (listener last)."""
        if self.listener_true is None:
            raise ValueError("listener position required")
        return np.vstack([self.anchors, self.listener_true])

    def stacked(self) -> np.ndarray:
        """Flat x = [x1, y1, ..., xN, yN, xL, yL]."""
        return self.positions().reshape(-1)

    def anchor_ranges(self) -> np.ndarray:
        """The anchor-anchor block of the range vector; needs no listener."""
        first, second = np.triu_indices(self.n_anchors, k=1)
        return np.linalg.norm(self.anchors[first] - self.anchors[second], axis=1)


@dataclass(frozen=True)
class RangeVector:
    """
    Canonical range vector rho_L = [rho_12, ..., rho_{N-1,N}, rho_L1, ..., rho_LN].
    """

    values: np.ndarray
    n_anchors: int

    def __post_init__(self) -> None:
        values = _frozen_array(self.values, "ranges")
        if values.shape != (n_range_columns(self.n_anchors),):
            raise ValueError(
                f"range vector for {self.n_anchors} anchors needs "
                f"{n_range_columns(self.n_anchors)} entries, got {values.shape}"
            )
        if np.any(values <= 0):
            raise ValueError("zero range: all ranges must be positive")
        object.__setattr__(self, "values", values)

    @property
    def anchor_block(self) -> np.ndarray:
        return self.values[: n_anchor_pairs(self.n_anchors)]

    @property
    def listener_block(self) -> np.ndarray:
        return self.values[n_anchor_pairs(self.n_anchors) :]

    def distance_matrix(self) -> np.ndarray:
        """Symmetric (N+1) x (N+1) distance matrix, listener last."""
        n = self.n_anchors
        distances = np.zeros((n + 1, n + 1))
        first, second = np.triu_indices(n, k=1)
        distances[first, second] = self.anchor_block
        distances[second, first] = self.anchor_block
        distances[n, :n] = self.listener_block
        distances[:n, n] = self.listener_block
        return distances

    def satisfies_triangle_inequality(self, tolerance: float = 1e-9) -> bool:
        """Check |d_ik - d_jk| <= d_ij for every node triple."""
        distances = self.distance_matrix()
        for i, j, k in itertools.permutations(range(self.n_anchors + 1), 3):
            if abs(distances[i, k] - distances[j, k]) > distances[i, j] + tolerance:
                return False
        return True


@dataclass(frozen=True)
class ClockParams:
    """
    Clock model of one node: C = (1 + skew) t, generated delays delta + eps.

    Attributes:
        skew: Dimensionless rate error (typically |skew| <= 1e-4)
        jitter_var: Timestamp jitter variance sigma_j^2 in s^2
        delay_err_sigma: Standard deviation of the delay-resolution error eps in s
    """

    skew: float = 0.0
    jitter_var: float = 0.0
    delay_err_sigma: float = 0.0

    def __post_init__(self) -> None:
        if not all(
            math.isfinite(v) for v in (self.skew, self.jitter_var, self.delay_err_sigma)
        ):
            raise ValueError("clock parameters must be finite")
        if self.jitter_var < 0:
            raise ValueError(f"jitter_var must be >= 0, got {self.jitter_var}")
        if self.delay_err_sigma < 0:
            raise ValueError(f"delay_err_sigma must be >= 0, got {self.delay_err_sigma}")
        if abs(self.skew) >= SKEW_SANITY_BOUND:
            raise ValueError(f"|skew| must be < {SKEW_SANITY_BOUND}, got {self.skew}")


@dataclass(frozen=True)
class NoiseParams:
    """Channel noise; sigma^2 = 2 sigma_j^2 + 2 sigma_c^2 per measurement."""

    channel_var: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.channel_var) or self.channel_var < 0:
            raise ValueError(f"channel_var must be >= 0, got {self.channel_var}")

    def measurement_variance(self, jitter_var: float) -> float:
        return 2.0 * jitter_var + 2.0 * self.channel_var


def split_measurement_sigma(sigma: float) -> Tuple[float, float]:
    """
    Split a total measurement sigma evenly into jitter and channel variances.

    Returns:
        (jitter_var, channel_var) with 2 jitter_var + 2 channel_var = sigma^2
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    quarter = sigma**2 / 4.0
    return quarter, quarter


#########################################################################################
# Operations
#########################################################################################


def ranges_from_geometry(geom: NetworkGeometry) -> RangeVector:
    """
    Euclidean ranges of a network in the canonical ordering.

    Args:
        geom: Network geometry with a known listener position

    Returns:
        RangeVector of N(N-1)/2 anchor ranges followed by N listener ranges

    Raises:
        ValueError: If the listener is unknown or two nodes coincide
    """
    if geom.listener_true is None:
        raise ValueError("listener position required to compute listener ranges")
    values = ranges_from_positions(geom.positions())
    if np.any(values <= ZERO_RANGE_TOLERANCE):
        labels = canonical_range_labels(geom.n_anchors)
        coincident = [labels[i] for i in np.flatnonzero(values <= ZERO_RANGE_TOLERANCE)]
        raise ValueError(f"zero range between coincident nodes: {', '.join(coincident)}")
    return RangeVector(values, geom.n_anchors)


@dataclass(frozen=True)
class NetworkClocks:
    """Clock parameters of the N anchors and the listener."""

    anchors: Tuple[ClockParams, ...]
    listener: ClockParams = field(default_factory=ClockParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(self.anchors))

    @property
    def relative_skews(self) -> np.ndarray:
        """theta = [skew_L - skew_1, ..., skew_L - skew_N]."""
        return np.array([self.listener.skew - clock.skew for clock in self.anchors])
