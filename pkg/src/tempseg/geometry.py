"""Cross-frame distances, kNN selection, and interpolation weights.

Distances are the squared Euclidean distance divided by gamma^2, computed via
the Gram-matrix expansion. They are deliberately never square-rooted: the
weight saturation threshold alpha applies to this squared-normalized value, so
alpha = 0.5 with gamma = 128 saturates at |c_i - c_j| = 128 / sqrt(2) cells.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InputError, StructuralError

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 2.0
DEFAULT_GAMMA = 128.0


@dataclass(frozen=True)
class CrossFrameDistances:
    """Dense matrix of normalized squared distances.

    Rows index current-frame points, columns previous-frame points.
    """

    values: np.ndarray
    gamma: float

    @property
    def num_current(self) -> int:
        return self.values.shape[0]

    @property
    def num_previous(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NeighborSet:
    """Per current point: nearest previous-frame indices, their distances, and
    (once assigned) interpolation weights.

    When the previous frame has fewer than ``k`` points every available point
    is used and the shortfall is recorded.
    """

    indices: np.ndarray
    distances: np.ndarray
    k: int
    shortfall: int = 0
    weights: Optional[np.ndarray] = None

    @property
    def k_effective(self) -> int:
        return self.indices.shape[1]


def cross_frame_distances(
    coords_current: np.ndarray,
    coords_previous: np.ndarray,
    gamma: float = DEFAULT_GAMMA,
) -> CrossFrameDistances:
    """Normalized squared distances between two coordinate sets.

    Computed as (|c_i|^2 + |c_j|^2 - 2 c_i . c_j) / gamma^2 in float64, with
    cancellation negatives clamped to zero.
    """
    if gamma <= 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    cur = np.asarray(coords_current, dtype=np.float64)
    prev = np.asarray(coords_previous, dtype=np.float64)
    if cur.ndim != 2 or cur.shape[1] != 3 or prev.ndim != 2 or prev.shape[1] != 3:
        raise InputError("coordinate sets must have shape (n, 3)")
    if cur.shape[0] == 0 or prev.shape[0] == 0:
        raise InputError("coordinate sets must be non-empty")
    sq_cur = np.einsum("ij,ij->i", cur, cur)
    sq_prev = np.einsum("ij,ij->i", prev, prev)
    values = sq_cur[:, None] + sq_prev[None, :] - 2.0 * (cur @ prev.T)
    np.maximum(values, 0.0, out=values)
    values /= gamma * gamma
    return CrossFrameDistances(values, float(gamma))


def knn_previous(distances: CrossFrameDistances, k: int) -> NeighborSet:
    """Per current point, the k smallest-distance previous indices.

    Ties are broken by the smaller previous index, so the result is invariant
    to permutations of the previous frame up to that rule.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    n_prev = distances.num_previous
    if n_prev == 0:
        raise StructuralError("previous frame is empty; caller must substitute the frame itself")
    k_eff = min(k, n_prev)
    # Stable argsort keeps equal distances in ascending previous-index order.
    order = np.argsort(distances.values, axis=1, kind="stable")[:, :k_eff]
    dist = np.take_along_axis(distances.values, order, axis=1)
    return NeighborSet(order.astype(np.int64), dist, k=k, shortfall=k - k_eff)


def interpolation_weights(
    neighbors: NeighborSet,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> NeighborSet:
    """Assign w = (alpha - min(d, alpha)) * beta to every neighbor.

    Weights decay linearly in the normalized squared distance and saturate to
    zero at d >= alpha, so w lies in [0, alpha * beta].
    """
    if alpha <= 0 or beta <= 0:
        raise InputError(f"alpha and beta must be positive, got {alpha}, {beta}")
    w = (alpha - np.minimum(neighbors.distances, alpha)) * beta
    return replace(neighbors, weights=w)
