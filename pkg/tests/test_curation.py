import numpy as np
import pytest
from scipy import stats

from latentworld.curation import cluster_weights, kmeans, retain_clusters, sample_scene
from latentworld.errors import ConfigError


class TestKmeans:
    def test_k_equals_n_zero_inertia(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((12, 4))
        c = kmeans(x, 12, rng)
        assert c.inertia < 1e-20
        assert len(np.unique(c.assignments)) == 12

    def test_two_separated_blobs(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((60, 2)) * 0.05 + np.array([3.0, 3.0])
        b = rng.standard_normal((60, 2)) * 0.05 + np.array([-3.0, -3.0])
        c = kmeans(np.concatenate([a, b]), 2, np.random.default_rng(2))
        means = sorted(c.centroids.tolist())
        np.testing.assert_allclose(means[0], [-3, -3], atol=0.1)
        np.testing.assert_allclose(means[1], [3, 3], atol=0.1)

    def test_seeded_determinism(self):
        x = np.random.default_rng(3).standard_normal((50, 3))
        c1 = kmeans(x, 5, np.random.default_rng(9))
        c2 = kmeans(x, 5, np.random.default_rng(9))
        np.testing.assert_array_equal(c1.assignments, c2.assignments)
        np.testing.assert_array_equal(c1.centroids, c2.centroids)

    def test_inertia_trace_nonincreasing(self):
        x = np.random.default_rng(4).standard_normal((200, 5))
        c = kmeans(x, 8, np.random.default_rng(5))
        trace = c.inertia_trace
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_k_too_large_rejected(self):
        with pytest.raises(ConfigError):
            kmeans(np.zeros((3, 2)), 4, np.random.default_rng(0))

    def test_every_point_assigned_to_nearest(self):
        x = np.random.default_rng(6).standard_normal((80, 3))
        c = kmeans(x, 6, np.random.default_rng(7))
        d2 = ((x[:, None, :] - c.centroids[None]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(c.assignments, d2.argmin(axis=1))


class TestRetainClusters:
    def _clustering(self, seed=0, n=100, k=10):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 4))
        return x, kmeans(x, k, np.random.default_rng(seed + 1))

    def test_self_retrieval(self):
        x, c = self._clustering()
        targets = {"self": x[:5]}
        retained, counts = retain_clusters(c, targets)
        for i in range(5):
            assert c.assignments[i] in retained

    def test_far_targets_still_assigned(self):
        _, c = self._clustering()
        far = np.full((3, 4), 100.0)
        retained, counts = retain_clusters(c, {"far": far})
        assert len(retained) >= 1
        assert counts["far"].sum() == 3

    def test_planted_three_of_ten(self):
        rng = np.random.default_rng(2)
        centers = rng.standard_normal((10, 3)) * 20
        pool = np.concatenate([centers + rng.standard_normal((10, 3)) * 0.01
                               for _ in range(8)])
        c = kmeans(pool, 10, np.random.default_rng(3))
        chosen = [1, 4, 7]
        targets = {"t": centers[chosen] + 0.001}
        retained, _ = retain_clusters(c, targets)
        expected = {c.assignments[np.argmin(((pool - centers[i]) ** 2).sum(axis=1))]
                    for i in chosen}
        assert set(retained.tolist()) == expected
        assert len(retained) == 3

    def test_dimension_mismatch(self):
        _, c = self._clustering()
        with pytest.raises(ConfigError):
            retain_clusters(c, {"bad": np.zeros((2, 7))})


class TestClusterWeights:
    def test_uniform_single_dataset(self):
        k = 8
        counts = {"d": np.ones(k, dtype=np.int64)}
        w = cluster_weights(counts, {"d": 1.0})
        np.testing.assert_allclose(w, np.full(k, 1.0 / k))

    def test_published_weights_hand_case(self):
        # four target sets with the published retrieval weights
        wd = {"a": 0.7, "b": 0.125, "c": 0.125, "d": 0.05}
        counts = {
            "a": np.array([10, 0, 10], dtype=np.int64),
            "b": np.array([0, 4, 4], dtype=np.int64),
            "c": np.array([2, 2, 0], dtype=np.int64),
            "d": np.array([0, 0, 5], dtype=np.int64),
        }
        w = cluster_weights(counts, wd)
        expected = np.array([
            0.7 * 10 / 20 + 0.125 * 0 + 0.125 * 2 / 4 + 0.05 * 0,
            0.7 * 0 + 0.125 * 4 / 8 + 0.125 * 2 / 4 + 0.05 * 0,
            0.7 * 10 / 20 + 0.125 * 4 / 8 + 0.125 * 0 + 0.05 * 5 / 5,
        ])
        np.testing.assert_allclose(w, expected, atol=1e-12)

    def test_weight_conservation(self):
        rng = np.random.default_rng(0)
        k = 12
        counts = {n: rng.integers(0, 9, size=k).astype(np.int64) + (1 if i == 0 else 0)
                  for i, n in enumerate("abcd")}
        for n in counts:
            if counts[n].sum() == 0:
                counts[n][0] = 1
        wd = {"a": 0.7, "b": 0.125, "c": 0.125, "d": 0.05}
        w = cluster_weights(counts, wd)
        assert abs(w.sum() - sum(wd.values())) < 1e-9

    def test_zero_count_dataset_rejected(self):
        with pytest.raises(ConfigError):
            cluster_weights({"d": np.zeros(4, dtype=np.int64)}, {"d": 1.0})


class TestSampleScene:
    def test_single_nonzero_cluster(self):
        w = np.array([0.0, 1.0, 0.0])
        members = [np.array([0]), np.array([10, 11, 12]), np.array([20])]
        out = sample_scene(w, members, np.random.default_rng(0), 100)
        assert set(out.tolist()) <= {10, 11, 12}

    def test_seeded_reproducibility(self):
        w = np.array([0.5, 0.3, 0.2])
        members = [np.arange(5), np.arange(5, 9), np.arange(9, 14)]
        a = sample_scene(w, members, np.random.default_rng(1), 50)
        b = sample_scene(w, members, np.random.default_rng(1), 50)
        np.testing.assert_array_equal(a, b)

    def test_frequencies_match_weights(self):
        rng = np.random.default_rng(2)
        w = np.array([0.4, 0.1, 0.25, 0.25])
        members = [np.array([i]) for i in range(4)]
        draws = sample_scene(w, members, rng, 100_000)
        freq = np.bincount(draws, minlength=4) / 100_000
        tv = 0.5 * np.abs(freq - w).sum()
        assert tv < 0.02
        chi2 = stats.chisquare(np.bincount(draws, minlength=4), w * 100_000)
        assert chi2.pvalue > 0.01

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ConfigError):
            sample_scene(np.zeros(3), [np.array([0])] * 3, np.random.default_rng(0), 1)
