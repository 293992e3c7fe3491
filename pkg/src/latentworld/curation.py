"""Cluster-based retrieval curation at desk scale.

Pool embeddings are clustered with k-means (k-means++ seeding, Lloyd
iterations); clusters hit by at least one target-set embedding are retained;
retained clusters get weights w_c = sum_d w_d * N_{d,c} / N_d and scenes are
drawn cluster-first, then uniformly within the cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class Clustering:
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,) pool-vector -> centroid index
    inertia: float
    inertia_trace: list[float]  # per Lloyd iteration; nonincreasing
    n_iter: int


def _nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    return idx, d2[np.arange(len(points)), idx]


def kmeans(pool: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int = 100) -> Clustering:
    """k-means++ initialization, then Lloyd iterations to an assignment fixpoint."""
    x = np.asarray(pool, dtype=np.float64)
    n = len(x)
    if k > n:
        raise ConfigError(f"k={k} exceeds pool size {n}")
    if k < 1:
        raise ConfigError("k must be positive")
    # k-means++ seeding
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = x[rng.integers(n)]
        else:
            centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))

    assignments = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        new_assign, dists = _nearest(x, centroids)
        trace.append(float(dists.sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(k):
            members = x[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # deterministic reseed: farthest point from its centroid
                far = int(np.argmax(dists))
                centroids[j] = x[far]
    _, dists = _nearest(x, centroids)
    return Clustering(centroids=centroids, assignments=assignments,
                      inertia=float(dists.sum()), inertia_trace=trace, n_iter=it)


def retain_clusters(clustering: Clustering, targets: dict[str, np.ndarray]):
    """Assign each target set to nearest centroids; keep clusters hit at least once.

    Returns (retained cluster indices, counts) with counts[d][c] = number of
    vectors from target set d landing in cluster c.
    """
    k = len(clustering.centroids)
    counts: dict[str, np.ndarray] = {}
    hit = np.zeros(k, dtype=bool)
    for name, vecs in targets.items():
        vecs = np.asarray(vecs, dtype=np.float64)
        if vecs.shape[1] != clustering.centroids.shape[1]:
            raise ConfigError(
                f"target set {name} has dim {vecs.shape[1]}, pool has {clustering.centroids.shape[1]}"
            )
        idx, _ = _nearest(vecs, clustering.centroids)
        counts[name] = np.bincount(idx, minlength=k).astype(np.int64)
        hit |= counts[name] > 0
    return np.flatnonzero(hit), counts


def cluster_weights(counts: dict[str, np.ndarray], dataset_weights: dict[str, float],
                    retained: np.ndarray | None = None) -> np.ndarray:
    """w_c = sum_d w_d * N_{d,c} / N_d over retained clusters (zero elsewhere)."""
    k = len(next(iter(counts.values())))
    w = np.zeros(k, dtype=np.float64)
    for name, n_dc in counts.items():
        n_d = int(n_dc.sum())
        if n_d <= 0:
            raise ConfigError(f"target set {name} is empty")
        w += dataset_weights[name] * n_dc / n_d
    if retained is not None:
        mask = np.zeros(k, dtype=bool)
        mask[retained] = True
        w = np.where(mask, w, 0.0)
    return w


def sample_scene(weights: np.ndarray, cluster_members: list[np.ndarray],
                 rng: np.random.Generator, draws: int) -> np.ndarray:
    """Draw scene indices: cluster proportional to w_c, then uniform member."""
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any() or w.sum() <= 0:
        raise ConfigError("weights must be nonnegative and not all zero")
    p = w / w.sum()
    clusters = rng.choice(len(w), size=draws, p=p)
    out = np.empty(draws, dtype=np.int64)
    for i, c in enumerate(clusters):
        members = cluster_members[c]
        if len(members) == 0:
            raise ConfigError(f"cluster {c} has positive weight but no members")
        out[i] = members[rng.integers(len(members))]
    return out
