"""Core domain types: LiDAR-style frames, sparse voxel grids, class maps.

Coordinates are kept in float64 so that rigid-transform round trips hold to
1e-9; per-point features stay float32 (the training dtype). All types are
treated as immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InputError, StructuralError

POSE_ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class ClassMap:
    """Ordered class names with a set of ids excluded from loss and IoU."""

    names: tuple[str, ...]
    ignore_ids: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if not self.names:
            raise InputError("class map needs at least one class")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "ignore_ids", frozenset(self.ignore_ids))
        bad = [i for i in self.ignore_ids if not 0 <= i < len(self.names)]
        if bad:
            raise InputError(f"ignore ids {bad} outside valid ids 0..{len(self.names) - 1}")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def scored_ids(self) -> list[int]:
        """Class ids that participate in loss and IoU."""
        return [i for i in range(len(self.names)) if i not in self.ignore_ids]


def _check_pose(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise InputError(f"pose must be 4x4, got {pose.shape}")
    rot = pose[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=POSE_ORTHONORMAL_TOL):
        raise InputError("pose rotation block is not orthonormal")
    if not np.isclose(np.linalg.det(rot), 1.0, atol=1e-6):
        raise InputError("pose rotation determinant is not +1")
    if not np.allclose(pose[3], (0.0, 0.0, 0.0, 1.0)):
        raise InputError("pose last row must be (0, 0, 0, 1)")
    return pose


class Frame:
    """One scan: continuous coordinates, per-point features, optional labels,
    and a rigid sensor-to-world pose.
    """

    __slots__ = ("coords", "features", "labels", "pose", "frame_index")

    def __init__(
        self,
        coords: np.ndarray,
        features: np.ndarray,
        labels: Optional[np.ndarray] = None,
        pose: Optional[np.ndarray] = None,
        frame_index: int = 0,
    ) -> None:
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InputError(f"coords must be (n, 3), got {coords.shape}")
        features = np.ascontiguousarray(features, dtype=np.float32)
        if features.ndim == 1:
            features = features[:, None]
        if features.shape[0] != coords.shape[0]:
            raise InputError(
                f"features length {features.shape[0]} != coords length {coords.shape[0]}"
            )
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.int32)
            if labels.shape != (coords.shape[0],):
                raise InputError(
                    f"labels shape {labels.shape} != ({coords.shape[0]},)"
                )
        if frame_index < 0:
            raise InputError(f"frame_index must be >= 0, got {frame_index}")
        self.coords = coords
        self.features = features
        self.labels = labels
        self.pose = _check_pose(pose if pose is not None else np.eye(4))
        self.frame_index = int(frame_index)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def with_coords(self, coords: np.ndarray, pose: Optional[np.ndarray] = None) -> "Frame":
        return Frame(
            coords,
            self.features,
            self.labels,
            self.pose if pose is None else pose,
            self.frame_index,
        )


class CellView(NamedTuple):
    feature: np.ndarray
    members: np.ndarray
    label: Optional[int]


class _CellMapping(Mapping):
    """Read-only mapping view over a grid's cells, keyed by quantized 3-tuples."""

    def __init__(self, grid: "VoxelGrid") -> None:
        self._grid = grid
        self._index = {tuple(k): i for i, k in enumerate(grid.keys.tolist())}

    def __getitem__(self, key: tuple[int, int, int]) -> CellView:
        i = self._index[tuple(key)]
        g = self._grid
        label = None if g.labels is None else int(g.labels[i])
        return CellView(g.features[i], g.members[i], label)

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        return iter(self._index)

    def __len__(self) -> int:
        return len(self._index)


class VoxelGrid:
    """Sparse voxel grid: lexicographically sorted integer keys, per-cell mean
    features, majority labels, and point back-references.
    """

    __slots__ = ("unit", "keys", "features", "labels", "members", "point_to_cell", "_cells")

    def __init__(
        self,
        unit: float,
        keys: np.ndarray,
        features: np.ndarray,
        labels: Optional[np.ndarray],
        members: tuple[np.ndarray, ...],
        point_to_cell: np.ndarray,
    ) -> None:
        self.unit = float(unit)
        self.keys = keys
        self.features = features
        self.labels = labels
        self.members = members
        self.point_to_cell = point_to_cell
        self._cells: Optional[_CellMapping] = None

    @property
    def num_cells(self) -> int:
        return self.keys.shape[0]

    @property
    def num_points(self) -> int:
        return self.point_to_cell.shape[0]

    @property
    def cells(self) -> Mapping:
        if self._cells is None:
            self._cells = _CellMapping(self)
        return self._cells


def quantize(coords: np.ndarray, unit: float) -> np.ndarray:
    """Cell key per point: mathematical floor of coord / unit on each axis."""
    return np.floor(np.asarray(coords, dtype=np.float64) / unit).astype(np.int64)


def _majority_labels(point_to_cell: np.ndarray, labels: np.ndarray, n_cells: int) -> np.ndarray:
    """Per-cell majority vote; ties go to the smallest class id."""
    labels = labels.astype(np.int64)
    n_classes = int(labels.max()) + 1 if labels.size else 1
    pair = point_to_cell * n_classes + labels
    uniq, counts = np.unique(pair, return_counts=True)
    cell_of = uniq // n_classes
    label_of = uniq % n_classes
    # Sort by (cell, -count, label); the first row per cell is the winner.
    order = np.lexsort((label_of, -counts, cell_of))
    cell_sorted = cell_of[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    out = np.empty(n_cells, dtype=np.int32)
    out[cell_sorted[first]] = label_of[order][first].astype(np.int32)
    return out


def voxelize(frame: Frame, unit: float) -> VoxelGrid:
    """Quantize a frame into a sparse grid.

    Per-cell feature is the arithmetic mean of member features; per-cell label
    is the majority vote with ties broken by the smallest class id. Cells are
    emitted in sorted key order regardless of input point order.
    """
    if unit <= 0:
        raise InputError(f"voxel unit must be positive, got {unit}")
    if len(frame) == 0:
        raise InputError("cannot voxelize an empty frame")
    finite = np.isfinite(frame.coords).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise InputError(f"non-finite coordinate at point index {bad}")

    keys_all = quantize(frame.coords, unit)
    keys, point_to_cell, counts = np.unique(
        keys_all, axis=0, return_inverse=True, return_counts=True
    )
    point_to_cell = point_to_cell.reshape(-1).astype(np.int64)

    feat_sum = np.zeros((keys.shape[0], frame.feature_dim), dtype=np.float64)
    np.add.at(feat_sum, point_to_cell, frame.features.astype(np.float64))
    features = (feat_sum / counts[:, None]).astype(np.float32)

    order = np.argsort(point_to_cell, kind="stable")
    bounds = np.cumsum(counts)[:-1]
    members = tuple(np.split(order, bounds))

    labels = None
    if frame.labels is not None:
        labels = _majority_labels(point_to_cell, frame.labels, keys.shape[0])

    return VoxelGrid(unit, keys, features, labels, members, point_to_cell)


def devoxelize(grid: VoxelGrid, per_cell_values) -> np.ndarray:
    """Copy each cell's value to every member point (nearest-cell copy).

    Accepts either an array aligned with ``grid.keys`` row order or a mapping
    from key tuples to vectors covering every cell.
    """
    if isinstance(per_cell_values, Mapping):
        rows = []
        for key in grid.keys.tolist():
            try:
                rows.append(np.asarray(per_cell_values[tuple(key)]))
            except KeyError:
                raise StructuralError(f"missing value for cell {tuple(key)}") from None
        values = np.stack(rows)
    else:
        values = np.asarray(per_cell_values)
        if values.shape[0] != grid.num_cells:
            raise StructuralError(
                f"per-cell values cover {values.shape[0]} cells, grid has {grid.num_cells}"
            )
    return values[grid.point_to_cell]


def devoxelize_backward(grid: VoxelGrid, per_point_grad: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`devoxelize`: sum point gradients into their cells."""
    out = np.zeros((grid.num_cells,) + per_point_grad.shape[1:], dtype=per_point_grad.dtype)
    np.add.at(out, grid.point_to_cell, per_point_grad)
    return out


def align_to_previous(current: Frame, previous: Frame) -> Frame:
    """Map the previous frame's coordinates into the current sensor system.

    Applies pose_current^-1 . pose_previous; features and labels pass through
    unchanged. The returned frame carries the current frame's pose so that its
    world mapping stays consistent.
    """
    try:
        inv_cur = np.linalg.inv(current.pose)
    except np.linalg.LinAlgError:
        raise InputError("current pose matrix is singular") from None
    transform = inv_cur @ previous.pose
    if not np.isfinite(transform).all():
        raise InputError("pose composition produced non-finite entries")
    rot = transform[:3, :3]
    trans = transform[:3, 3]
    coords = previous.coords @ rot.T + trans
    return Frame(coords, previous.features, previous.labels, current.pose, previous.frame_index)


def crop_centered(frame: Frame, extent: Sequence[float]) -> Frame:
    """Keep points with |coord| <= extent/2 per axis (crop centered on the sensor)."""
    half = np.asarray(extent, dtype=np.float64) / 2.0
    if half.shape != (3,) or (half <= 0).any():
        raise InputError(f"crop extent must be three positive lengths, got {extent}")
    keep = (np.abs(frame.coords) <= half).all(axis=1)
    if not keep.any():
        raise InputError("centered crop removed every point")
    return Frame(
        frame.coords[keep],
        frame.features[keep],
        None if frame.labels is None else frame.labels[keep],
        frame.pose,
        frame.frame_index,
    )
