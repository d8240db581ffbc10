import numpy as np
import pytest

from tempseg import ClassMap, Frame, InputError, StructuralError, align_to_previous, crop_centered, devoxelize, voxelize
from tempseg.frames import devoxelize_backward, quantize

from conftest import random_frame, random_pose


def make_frame(coords, labels=None, pose=None):
    coords = np.asarray(coords, dtype=np.float64)
    feats = np.ones((len(coords), 1), dtype=np.float32)
    return Frame(coords, feats, labels, pose)


class TestVoxelize:
    def test_floor_quantization(self):
        grid = voxelize(make_frame([(0.12, -0.07, 1.00)]), unit=0.05)
        assert grid.keys.tolist() == [[2, -2, 20]]

    def test_majority_label(self):
        frame = make_frame([(0.01, 0.01, 0.01), (0.02, 0.02, 0.02)], labels=[1, 1])
        grid = voxelize(frame, unit=0.05)
        assert grid.num_cells == 1
        assert grid.labels.tolist() == [1]

    def test_majority_tie_smallest_id(self):
        frame = make_frame([(0.01, 0, 0), (0.02, 0, 0), (0.03, 0, 0), (0.04, 0, 0)],
                           labels=[2, 2, 1, 1])
        grid = voxelize(frame, unit=1.0)
        assert grid.labels.tolist() == [1]

    def test_partition_of_random_points(self, rng):
        frame = random_frame(rng, n=1000)
        grid = voxelize(frame, unit=0.1)
        seen = np.concatenate([m for m in grid.members])
        assert sorted(seen.tolist()) == list(range(1000))
        # each point maps to the cell holding it
        keys = quantize(frame.coords, 0.1)
        assert np.array_equal(keys, grid.keys[grid.point_to_cell])

    def test_mean_features(self, rng):
        coords = np.zeros((4, 3))
        feats = rng.normal(size=(4, 2)).astype(np.float32)
        grid = voxelize(Frame(coords, feats), unit=1.0)
        np.testing.assert_allclose(grid.features[0], feats.mean(axis=0), rtol=1e-6)

    def test_sorted_key_order(self, rng):
        frame = random_frame(rng, n=300)
        grid = voxelize(frame, unit=0.5)
        keys = grid.keys.tolist()
        assert keys == sorted(keys)

    def test_idempotent_on_cell_centers(self):
        unit = 0.25
        grid = voxelize(make_frame([(0.3, 0.6, -0.4), (1.2, 0.1, 0.9)]), unit)
        centers = (grid.keys + 0.5) * unit
        regrid = voxelize(make_frame(centers), unit)
        assert np.array_equal(regrid.keys, grid.keys)
        assert regrid.num_points == regrid.num_cells

    def test_rejects_nonfinite(self):
        frame = make_frame([(0.0, 0.0, 0.0), (np.nan, 0.0, 0.0)])
        with pytest.raises(InputError, match="point index 1"):
            voxelize(frame, 0.1)

    def test_rejects_bad_unit_and_empty(self):
        with pytest.raises(InputError):
            voxelize(make_frame([(0, 0, 0)]), 0.0)
        with pytest.raises(InputError):
            voxelize(Frame(np.zeros((0, 3)), np.zeros((0, 1))), 0.1)

    def test_cells_mapping_view(self):
        frame = make_frame([(0.01, 0.01, 0.01), (0.02, 0.02, 0.02)], labels=[1, 1])
        grid = voxelize(frame, unit=0.05)
        cell = grid.cells[(0, 0, 0)]
        assert cell.label == 1
        assert sorted(cell.members.tolist()) == [0, 1]
        assert len(grid.cells) == 1


class TestDevoxelize:
    def test_single_cell_copies_value(self):
        frame = make_frame([(0.01, 0, 0), (0.02, 0, 0), (0.03, 0, 0)])
        grid = voxelize(frame, unit=1.0)
        value = np.array([[3.0, -1.0]])
        out = devoxelize(grid, value)
        assert out.shape == (3, 2)
        assert (out == value).all()

    def test_roundtrip_constant_features(self):
        frame = make_frame([(0.3, 0.6, -0.4), (5.0, 5.0, 5.0)])
        grid = voxelize(frame, unit=0.25)
        out = devoxelize(grid, grid.features)
        np.testing.assert_array_equal(out, np.ones((2, 1), dtype=np.float32))

    def test_matches_floor_cell_lookup(self, rng):
        frame = random_frame(rng, n=400)
        unit = 0.3
        grid = voxelize(frame, unit)
        values = rng.normal(size=(grid.num_cells, 5))
        out = devoxelize(grid, values)
        lookup = {tuple(k): i for i, k in enumerate(grid.keys.tolist())}
        for p in range(len(frame)):
            key = tuple(np.floor(frame.coords[p] / unit).astype(int).tolist())
            np.testing.assert_array_equal(out[p], values[lookup[key]])

    def test_mapping_input_and_missing_cell(self, rng):
        frame = random_frame(rng, n=50)
        grid = voxelize(frame, 0.5)
        mapping = {tuple(k): np.array([1.0]) for k in grid.keys.tolist()}
        out = devoxelize(grid, mapping)
        assert out.shape == (50, 1)
        mapping.popitem()
        with pytest.raises(StructuralError, match="missing value"):
            devoxelize(grid, mapping)

    def test_backward_sums_member_gradients(self, rng):
        frame = random_frame(rng, n=80)
        grid = voxelize(frame, 0.4)
        dpoints = rng.normal(size=(80, 2))
        dcells = devoxelize_backward(grid, dpoints)
        for i, members in enumerate(grid.members):
            np.testing.assert_allclose(dcells[i], dpoints[members].sum(axis=0))


class TestAlignment:
    def test_identical_poses_unchanged(self, rng):
        pose = random_pose(rng)
        cur = random_frame(rng, pose=pose)
        prev = random_frame(rng, pose=pose)
        aligned = align_to_previous(cur, prev)
        np.testing.assert_allclose(aligned.coords, prev.coords, atol=1e-9)

    def test_translation_shift(self, rng):
        # Ego advanced +1 m in x; previous-scan points slip back by 1 m.
        pose_cur = np.eye(4)
        pose_cur[0, 3] = 1.0
        cur = random_frame(rng, pose=pose_cur)
        prev = random_frame(rng, pose=np.eye(4))
        aligned = align_to_previous(cur, prev)
        np.testing.assert_allclose(aligned.coords, prev.coords + np.array([-1.0, 0, 0]), atol=1e-9)

    def test_alignment_inverse_roundtrip(self, rng):
        for _ in range(10):
            cur = random_frame(rng, pose=random_pose(rng))
            prev = random_frame(rng, pose=random_pose(rng))
            aligned = align_to_previous(cur, prev)
            back = align_to_previous(prev, aligned.with_coords(aligned.coords, cur.pose))
            np.testing.assert_allclose(back.coords, prev.coords, atol=1e-9)

    def test_rigidity_preserves_pairwise_distances(self, rng):
        cur = random_frame(rng, n=40, pose=random_pose(rng))
        prev = random_frame(rng, n=40, pose=random_pose(rng))
        aligned = align_to_previous(cur, prev)
        before = np.linalg.norm(prev.coords[:, None] - prev.coords[None, :], axis=2)
        after = np.linalg.norm(aligned.coords[:, None] - aligned.coords[None, :], axis=2)
        np.testing.assert_allclose(after, before, atol=1e-9)

    def test_labels_and_features_pass_through(self, rng):
        cur = random_frame(rng, pose=random_pose(rng))
        prev = random_frame(rng, pose=random_pose(rng))
        aligned = align_to_previous(cur, prev)
        np.testing.assert_array_equal(aligned.features, prev.features)
        np.testing.assert_array_equal(aligned.labels, prev.labels)


class TestFrameValidation:
    def test_length_mismatch(self):
        with pytest.raises(InputError):
            Frame(np.zeros((3, 3)), np.zeros((2, 1)))
        with pytest.raises(InputError):
            Frame(np.zeros((3, 3)), np.zeros((3, 1)), labels=[1, 2])

    def test_non_orthonormal_pose_rejected(self):
        pose = np.eye(4)
        pose[0, 0] = 2.0
        with pytest.raises(InputError, match="orthonormal"):
            Frame(np.zeros((1, 3)), np.zeros((1, 1)), pose=pose)

    def test_reflection_pose_rejected(self):
        pose = np.eye(4)
        pose[0, 0] = -1.0
        with pytest.raises(InputError, match="determinant"):
            Frame(np.zeros((1, 3)), np.zeros((1, 1)), pose=pose)


class TestClassMap:
    def test_ignore_subset_enforced(self):
        with pytest.raises(InputError):
            ClassMap(("a", "b"), frozenset({5}))

    def test_scored_ids(self):
        cm = ClassMap(("ignore", "a", "b"), frozenset({0}))
        assert cm.scored_ids() == [1, 2]


class TestCrop:
    def test_centered_crop(self):
        frame = make_frame([(0, 0, 0), (3.0, 0, 0), (0, 0, -3.0)])
        cropped = crop_centered(frame, (2.0, 2.0, 2.0))
        assert len(cropped) == 1

    def test_crop_keeps_alignment_of_fields(self, rng):
        frame = random_frame(rng, n=100, spread=6.0)
        cropped = crop_centered(frame, (6.0, 6.0, 6.0))
        keep = (np.abs(frame.coords) <= 3.0).all(axis=1)
        np.testing.assert_array_equal(cropped.labels, frame.labels[keep])
