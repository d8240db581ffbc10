import numpy as np
import pytest

from tempseg import InputError, cross_frame_distances, interpolation_weights, knn_previous
from tempseg.geometry import CrossFrameDistances

import oracles


class TestCrossFrameDistances:
    def test_identical_point_is_zero(self):
        d = cross_frame_distances([[1.0, 2.0, 3.0]], [[1.0, 2.0, 3.0]], gamma=128.0)
        assert d.values[0, 0] == 0.0

    def test_normalized_unit_distance(self):
        d = cross_frame_distances([[0.0, 0.0, 0.0]], [[128.0, 0.0, 0.0]], gamma=128.0)
        assert d.values[0, 0] == pytest.approx(1.0, rel=1e-12)

    def test_matches_pairwise_loop(self, rng):
        cur = rng.uniform(0, 100, size=(50, 3))
        prev = rng.uniform(0, 100, size=(50, 3))
        d = cross_frame_distances(cur, prev, gamma=64.0)
        expected = oracles.pairwise_sq_distances(cur, prev, 64.0)
        np.testing.assert_allclose(d.values, expected, rtol=1e-6)

    def test_gram_equivalence_fuzz(self, rng):
        for _ in range(25):
            n, m = rng.integers(1, 40, size=2)
            cur = rng.uniform(-50, 50, size=(n, 3))
            prev = rng.uniform(-50, 50, size=(m, 3))
            gamma = float(rng.uniform(0.5, 200.0))
            d = cross_frame_distances(cur, prev, gamma)
            expected = oracles.pairwise_sq_distances(cur, prev, gamma)
            np.testing.assert_allclose(d.values, expected, rtol=1e-6, atol=1e-12)
            assert (d.values >= 0).all()

    def test_input_validation(self):
        with pytest.raises(InputError):
            cross_frame_distances([[0, 0, 0]], [[0, 0, 0]], gamma=0.0)
        with pytest.raises(InputError):
            cross_frame_distances(np.zeros((0, 3)), [[0, 0, 0]], gamma=1.0)


class TestKnnPrevious:
    def test_exact_match_first(self):
        d = cross_frame_distances([[1.0, 1.0, 1.0]], [[9, 9, 9], [1, 1, 1]], gamma=1.0)
        nb = knn_previous(d, k=1)
        assert nb.indices.tolist() == [[1]]
        assert nb.distances[0, 0] == 0.0

    def test_matches_full_sort_oracle(self, rng):
        cur = rng.uniform(0, 20, size=(200, 3))
        prev = rng.uniform(0, 20, size=(200, 3))
        d = cross_frame_distances(cur, prev, gamma=4.0)
        nb = knn_previous(d, k=5)
        exp_idx, exp_dist = oracles.knn_full_sort(d.values, 5)
        np.testing.assert_array_equal(nb.indices, exp_idx)
        np.testing.assert_allclose(nb.distances, exp_dist, rtol=1e-12)

    def test_tie_breaks_to_smaller_index(self):
        # columns 1 and 2 are equidistant at the k boundary
        values = np.array([[0.0, 2.0, 2.0, 5.0]])
        nb = knn_previous(CrossFrameDistances(values, 1.0), k=2)
        assert nb.indices.tolist() == [[0, 1]]

    def test_integer_coordinate_ties_match_oracle(self, rng):
        # quantized coordinates produce many exact ties
        cur = rng.integers(0, 4, size=(60, 3)).astype(float)
        prev = rng.integers(0, 4, size=(80, 3)).astype(float)
        d = cross_frame_distances(cur, prev, gamma=4.0)
        nb = knn_previous(d, k=7)
        exp_idx, _ = oracles.knn_full_sort(d.values, 7)
        np.testing.assert_array_equal(nb.indices, exp_idx)

    def test_shortfall_when_previous_small(self, rng):
        d = cross_frame_distances(rng.uniform(size=(5, 3)), rng.uniform(size=(3, 3)), gamma=1.0)
        nb = knn_previous(d, k=5)
        assert nb.k_effective == 3
        assert nb.shortfall == 2

    def test_distances_nondecreasing(self, rng):
        d = cross_frame_distances(rng.uniform(size=(30, 3)), rng.uniform(size=(40, 3)), gamma=1.0)
        nb = knn_previous(d, k=6)
        assert (np.diff(nb.distances, axis=1) >= 0).all()

    def test_permutation_invariance_up_to_tie_rule(self, rng):
        cur = rng.uniform(0, 10, size=(40, 3))
        prev = rng.uniform(0, 10, size=(50, 3))
        d = cross_frame_distances(cur, prev, gamma=2.0)
        nb = knn_previous(d, k=4)
        perm = rng.permutation(50)
        d_perm = cross_frame_distances(cur, prev[perm], gamma=2.0)
        nb_perm = knn_previous(d_perm, k=4)
        np.testing.assert_array_equal(perm[nb_perm.indices], nb.indices)

    def test_rejects_bad_k(self, rng):
        d = cross_frame_distances(rng.uniform(size=(2, 3)), rng.uniform(size=(2, 3)), gamma=1.0)
        with pytest.raises(InputError):
            knn_previous(d, k=0)


class TestInterpolationWeights:
    def test_weight_table(self, rng):
        d = CrossFrameDistances(np.array([[0.0, 0.25, 0.5, 0.75]]), 1.0)
        nb = interpolation_weights(knn_previous(d, k=4), alpha=0.5, beta=2.0)
        np.testing.assert_allclose(nb.weights, [[1.0, 0.5, 0.0, 0.0]])

    def test_saturation_beyond_alpha(self):
        d = CrossFrameDistances(np.array([[0.5, 5.0, 100.0]]), 1.0)
        nb = interpolation_weights(knn_previous(d, k=3), alpha=0.5, beta=2.0)
        assert (nb.weights == 0.0).all()

    def test_monotone_nonincreasing_in_distance(self, rng):
        dvals = np.sort(rng.uniform(0, 1, size=(20, 8)), axis=1)
        nb = interpolation_weights(knn_previous(CrossFrameDistances(dvals, 1.0), k=8))
        assert (np.diff(nb.weights, axis=1) <= 1e-15).all()
        assert (nb.weights >= 0).all() and (nb.weights <= 0.5 * 2.0).all()

    def test_rejects_bad_constants(self, rng):
        d = CrossFrameDistances(np.zeros((1, 1)), 1.0)
        nb = knn_previous(d, k=1)
        with pytest.raises(InputError):
            interpolation_weights(nb, alpha=0.0)
