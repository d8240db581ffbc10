"""Scan, label, and pose file readers/writers plus the multi-scan class table.

Formats follow the common LiDAR benchmark layout: scans are little-endian
binary with four float32 per point (x, y, z, remission); labels are one uint32
per point whose lower 16 bits carry the semantic class (the upper, instance,
bits are parsed and discarded); poses are text, one row-major 3x4 matrix per
line, promoted to 4x4.

Poses are consumed as given; no camera-calibration correction is applied
(documented limitation).
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .frames import ClassMap, Frame

SEMANTIC_KITTI_MULTISCAN = ClassMap(
    (
        "unlabeled",
        "car", "bicycle", "motorcycle", "truck", "other-vehicle",
        "person", "bicyclist", "motorcyclist",
        "road", "parking", "sidewalk", "other-ground",
        "building", "fence", "vegetation", "trunk", "terrain",
        "pole", "traffic-sign",
        "moving-car", "moving-bicyclist", "moving-person",
        "moving-motorcyclist", "moving-other-vehicle", "moving-truck",
    ),
    ignore_ids=frozenset({0}),
)

# Static raw-id to train-id table for the multi-scan label set; everything
# unlisted collapses to the ignored id 0.
SEMANTIC_KITTI_RAW_TO_TRAIN = {
    0: 0, 1: 0, 10: 1, 11: 2, 13: 5, 15: 3, 16: 5, 18: 4, 20: 5,
    30: 6, 31: 7, 32: 8, 40: 9, 44: 10, 48: 11, 49: 12, 50: 13,
    51: 14, 52: 0, 60: 9, 70: 15, 71: 16, 72: 17, 80: 18, 81: 19,
    99: 0, 252: 20, 253: 21, 254: 22, 255: 23, 256: 24, 257: 24,
    258: 25, 259: 24,
}


def kitti_remap_table() -> np.ndarray:
    table = np.zeros(max(SEMANTIC_KITTI_RAW_TO_TRAIN) + 1, dtype=np.int32)
    for raw, train in SEMANTIC_KITTI_RAW_TO_TRAIN.items():
        table[raw] = train
    return table


def read_scan(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (coords (n,3) float64, remission (n,1) float32)."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise InputError(f"{path}: scan size {raw.size} is not a multiple of 4 floats")
    raw = raw.reshape(-1, 4)
    return raw[:, :3].astype(np.float64), raw[:, 3:4].copy()


def write_scan(path, coords: np.ndarray, remission: np.ndarray) -> None:
    coords = np.asarray(coords, dtype=np.float32).reshape(-1, 3)
    remission = np.asarray(remission, dtype=np.float32).reshape(-1, 1)
    if coords.shape[0] != remission.shape[0]:
        raise InputError("coords and remission lengths differ")
    out = np.concatenate([coords, remission], axis=1).astype("<f4")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out.tofile(path)


def read_labels(path) -> np.ndarray:
    """Semantic class per point (lower 16 bits); instance bits are discarded."""
    raw = np.fromfile(path, dtype="<u4")
    semantic = (raw & 0xFFFF).astype(np.int32)
    _instance = raw >> 16  # parsed, intentionally unused
    return semantic


def write_labels(path, semantic: np.ndarray, instance: Optional[np.ndarray] = None) -> None:
    semantic = np.asarray(semantic, dtype=np.uint32)
    if (semantic > 0xFFFF).any():
        raise InputError("semantic ids must fit in 16 bits")
    packed = semantic.copy()
    if instance is not None:
        packed |= np.asarray(instance, dtype=np.uint32) << 16
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    packed.astype("<u4").tofile(path)


def read_poses(path) -> np.ndarray:
    """(t, 4, 4) pose array from a text file of row-major 3x4 matrices."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            values = [float(v) for v in line.split()]
            if len(values) != 12:
                raise InputError(f"{path}:{line_no + 1}: expected 12 values, got {len(values)}")
            pose = np.eye(4)
            pose[:3, :] = np.array(values).reshape(3, 4)
            rows.append(pose)
    if not rows:
        raise InputError(f"{path}: no poses found")
    return np.stack(rows)


def write_poses(path, poses: np.ndarray) -> None:
    poses = np.asarray(poses, dtype=np.float64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for pose in poses:
            fh.write(" ".join(repr(float(v)) for v in pose[:3, :].reshape(-1)) + "\n")


def save_sequence(directory, frames: Sequence[Frame]) -> None:
    """Write frames in the scan/label/pose layout used by the readers."""
    directory = Path(directory)
    for i, frame in enumerate(frames):
        write_scan(directory / "velodyne" / f"{i:06d}.bin", frame.coords, frame.features[:, :1])
        if frame.labels is not None:
            write_labels(directory / "labels" / f"{i:06d}.label", frame.labels)
    write_poses(directory / "poses.txt", np.stack([f.pose for f in frames]))


def load_sequence(
    directory,
    remap: Optional[np.ndarray] = None,
    limit: Optional[int] = None,
) -> list[Frame]:
    """Read a scan directory back into frames.

    ``remap`` is an optional raw-id lookup table (see
    :func:`kitti_remap_table`); ids beyond the table collapse to 0.
    """
    directory = Path(directory)
    scan_paths = sorted((directory / "velodyne").glob("*.bin"))
    if not scan_paths:
        raise InputError(f"{directory}: no scans under velodyne/")
    if limit is not None:
        scan_paths = scan_paths[:limit]
    poses_path = directory / "poses.txt"
    poses = read_poses(poses_path) if poses_path.exists() else None
    if poses is not None and len(poses) < len(scan_paths):
        raise InputError(f"{poses_path}: {len(poses)} poses for {len(scan_paths)} scans")
    frames = []
    for i, scan_path in enumerate(scan_paths):
        coords, remission = read_scan(scan_path)
        label_path = directory / "labels" / (scan_path.stem + ".label")
        labels = None
        if label_path.exists():
            labels = read_labels(label_path)
            if len(labels) != len(coords):
                raise InputError(f"{label_path}: {len(labels)} labels for {len(coords)} points")
            if remap is not None:
                labels = np.where(labels < len(remap), remap[np.minimum(labels, len(remap) - 1)], 0)
        pose = poses[i] if poses is not None else np.eye(4)
        frames.append(Frame(coords, remission, labels, pose, i))
    return frames
