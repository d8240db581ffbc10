"""Synthetic moving-object scenes: the desk-scale verification substrate.

Scenes put axis-aligned boxes on a flat ground square. Box shapes, positions,
and surface albedos are drawn from one pooled distribution before any box is
designated static or moving, so a single frame carries no signal about motion
status; only cross-frame displacement separates the two classes. Surface
points are sampled once per sequence and perturbed with fresh noise in every
frame, so a zero-velocity scene repeats itself up to that noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError
from .frames import ClassMap, Frame

BASIC_SCHEME = ClassMap(("ground", "static-object", "moving-object"))
SPEED_SCHEME = ClassMap(("ground", "static-object", "slow-object", "fast-object"))


@dataclass(frozen=True)
class SyntheticSceneSpec:
    num_static: int = 3
    num_moving: int = 2
    frame_count: int = 10
    points_per_object: int = 150
    ground_points: int = 600
    noise_sigma: float = 0.03
    extent: float = 12.0
    object_size_range: tuple[float, float] = (0.8, 1.8)
    speed_range: tuple[float, float] = (0.35, 0.8)
    velocities: Optional[tuple[tuple[float, float, float], ...]] = None
    class_scheme: str = "basic"
    speed_threshold: float = 0.55
    albedo_range: tuple[float, float] = (0.2, 0.9)

    def __post_init__(self) -> None:
        if self.num_static < 0 or self.num_moving < 0:
            raise InputError("object counts must be non-negative")
        if self.frame_count < 1:
            raise InputError("need at least one frame")
        if self.noise_sigma < 0:
            raise InputError("noise sigma must be non-negative")
        if self.class_scheme not in ("basic", "speed"):
            raise InputError(f"unknown class scheme {self.class_scheme!r}")
        if self.velocities is not None and len(self.velocities) != self.num_moving:
            raise InputError(
                f"got {len(self.velocities)} velocities for {self.num_moving} moving objects"
            )

    def class_map(self) -> ClassMap:
        return BASIC_SCHEME if self.class_scheme == "basic" else SPEED_SCHEME

    def object_class(self, velocity: np.ndarray) -> int:
        speed = float(np.linalg.norm(velocity))
        if speed == 0.0:
            return 1
        if self.class_scheme == "basic":
            return 2
        return 3 if speed >= self.speed_threshold else 2


@dataclass
class ObjectDescription:
    dims: np.ndarray
    center: np.ndarray
    velocity: np.ndarray
    albedo: float
    class_id: int


@dataclass
class SceneDescription:
    objects: list[ObjectDescription]
    ground_albedo: float


def _sample_box_surface(rng: np.random.Generator, dims: np.ndarray, n: int) -> np.ndarray:
    """Uniform points on the surface of a box spanning [-d/2, d/2]^2 x [0, dz]."""
    dx, dy, dz = dims
    areas = np.array([dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.zeros((n, 3))
    for f in range(6):
        sel = face == f
        if f in (0, 1):  # +-x faces
            pts[sel, 0] = (0.5 if f == 0 else -0.5) * dx
            pts[sel, 1] = u[sel] * dy
            pts[sel, 2] = (v[sel] + 0.5) * dz
        elif f in (2, 3):  # +-y faces
            pts[sel, 0] = u[sel] * dx
            pts[sel, 1] = (0.5 if f == 2 else -0.5) * dy
            pts[sel, 2] = (v[sel] + 0.5) * dz
        else:  # top / bottom
            pts[sel, 0] = u[sel] * dx
            pts[sel, 1] = v[sel] * dy
            pts[sel, 2] = dz if f == 4 else 0.0
    return pts


def _place_center(
    rng: np.random.Generator,
    dims: np.ndarray,
    velocity: np.ndarray,
    frame_count: int,
    extent: float,
    existing: list[tuple[np.ndarray, float]],
) -> np.ndarray:
    """Start position keeping the whole trajectory inside the square, with a
    mild separation from already-placed objects (deterministic rejection)."""
    half = extent / 2.0
    travel = velocity[:2] * (frame_count - 1)
    margin = float(dims[:2].max()) / 2.0 + 0.1
    lo = -half + margin - np.minimum(travel, 0.0)
    hi = half - margin - np.maximum(travel, 0.0)
    if (lo >= hi).any():
        raise InputError("object trajectory does not fit inside the scene extent")
    radius = float(np.hypot(dims[0], dims[1])) / 2.0
    for _ in range(64):
        xy = rng.uniform(lo, hi)
        ok = all(np.linalg.norm(xy - c) > radius + r for c, r in existing)
        if ok:
            break
    existing.append((xy, radius))
    return np.array([xy[0], xy[1], 0.0])


def generate_synthetic_sequence(
    spec: SyntheticSceneSpec,
    seed: int,
    return_description: bool = False,
):
    """Deterministic frame sequence for a given seed.

    Moving objects translate by their velocity each frame; poses are identity
    (everything lives in the world frame); labels follow the class scheme.
    """
    rng = np.random.default_rng(seed)
    n_objects = spec.num_static + spec.num_moving

    dims = rng.uniform(*spec.object_size_range, size=(n_objects, 3))
    albedos = rng.uniform(*spec.albedo_range, size=n_objects)
    ground_albedo = float(rng.uniform(*spec.albedo_range))

    if spec.velocities is not None:
        moving_vel = np.asarray(spec.velocities, dtype=np.float64).reshape(spec.num_moving, 3)
    else:
        angles = rng.uniform(0.0, 2.0 * math.pi, size=spec.num_moving)
        speeds = rng.uniform(*spec.speed_range, size=spec.num_moving)
        moving_vel = np.stack(
            [speeds * np.cos(angles), speeds * np.sin(angles), np.zeros(spec.num_moving)], axis=1
        )
    velocities = np.zeros((n_objects, 3))
    velocities[spec.num_static:] = moving_vel

    placed: list[tuple[np.ndarray, float]] = []
    centers = np.stack([
        _place_center(rng, dims[i], velocities[i], spec.frame_count, spec.extent, placed)
        for i in range(n_objects)
    ]) if n_objects else np.zeros((0, 3))

    objects = [
        ObjectDescription(
            dims[i], centers[i], velocities[i], float(albedos[i]),
            spec.object_class(velocities[i]),
        )
        for i in range(n_objects)
    ]

    base_surfaces = [
        _sample_box_surface(rng, dims[i], spec.points_per_object) for i in range(n_objects)
    ]
    half = spec.extent / 2.0
    ground_base = np.zeros((spec.ground_points, 3))
    ground_base[:, :2] = rng.uniform(-half, half, size=(spec.ground_points, 2))

    labels = np.concatenate(
        [np.full(spec.ground_points, 0, dtype=np.int32)]
        + [np.full(spec.points_per_object, obj.class_id, dtype=np.int32) for obj in objects]
    )
    base_albedo = np.concatenate(
        [np.full(spec.ground_points, ground_albedo)]
        + [np.full(spec.points_per_object, obj.albedo) for obj in objects]
    )

    frames = []
    for t in range(spec.frame_count):
        parts = [ground_base]
        for i, obj in enumerate(objects):
            parts.append(base_surfaces[i] + obj.center + t * obj.velocity)
        coords = np.concatenate(parts)
        coords = coords + rng.normal(0.0, spec.noise_sigma, size=coords.shape)
        features = (base_albedo + rng.normal(0.0, 0.02, size=base_albedo.shape)).astype(np.float32)
        frames.append(Frame(coords, features[:, None], labels.copy(), np.eye(4), t))

    if return_description:
        return frames, SceneDescription(objects, ground_albedo)
    return frames


def generate_dataset(
    spec: SyntheticSceneSpec, num_sequences: int, seed: int
) -> list[list[Frame]]:
    """Independent sequences with per-sequence seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(num_sequences, np.uint64)
    return [generate_synthetic_sequence(spec, int(s % (2**63))) for s in seeds]
