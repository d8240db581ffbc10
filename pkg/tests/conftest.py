import numpy as np
import pytest

from tempseg import ClassMap, Frame, ModelConfig, make_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frame(rng, n=60, feature_dim=1, num_classes=3, spread=4.0, pose=None, frame_index=0):
    coords = rng.uniform(-spread, spread, size=(n, 3))
    features = rng.normal(size=(n, feature_dim)).astype(np.float32)
    labels = rng.integers(0, num_classes, size=n).astype(np.int32)
    return Frame(coords, features, labels, pose, frame_index)


def random_pose(rng):
    """Random rigid transform via QR with positive determinant."""
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    pose = np.eye(4)
    pose[:3, :3] = q
    pose[:3, 3] = rng.uniform(-2.0, 2.0, size=3)
    return pose


def tiny_model(rng, num_classes=3, feature_width=4, voxel_unit=0.5, gamma=8.0,
               k_interp=3, k_refine=3, dtype=np.float32):
    names = tuple(f"class_{i}" for i in range(num_classes))
    config = ModelConfig(
        num_classes=num_classes,
        feature_width=feature_width,
        attention_hidden=4,
        refiner_hidden=4,
        voxel_unit=voxel_unit,
        gamma=gamma,
        k_interp=k_interp,
        k_refine=k_refine,
    )
    return make_model(config, ClassMap(names), rng, dtype=dtype)
