"""Fixture builders shared across test modules."""

import numpy as np

from discseg.loss import cluster_means, vector_norm


def random_labels(rng, shape, n_clusters, background=0.15):
    """Random label map in which every label 1..n_clusters occurs at least twice."""
    while True:
        labels = rng.integers(1, n_clusters + 1, size=shape)
        labels[rng.random(shape) < background] = 0
        counts = np.bincount(labels.reshape(-1), minlength=n_clusters + 1)
        if np.all(counts[1:] >= 2):
            return labels


def kink_free_fixture(rng, shape=(8, 8), dims=4, n_clusters=3, delta_v=0.5, delta_d=1.5, norm="l2", gap=1e-3):
    """Random embeddings whose hinges and norms all sit at least ``gap`` from a kink."""
    while True:
        labels = random_labels(rng, shape, n_clusters)
        centers = rng.normal(scale=1.2, size=(n_clusters, dims))
        emb = centers[np.maximum(labels, 1) - 1] + rng.normal(scale=0.4, size=shape + (dims,))
        emb[labels == 0] = rng.normal(size=(int((labels == 0).sum()), dims))
        stats = cluster_means(emb, labels)
        idx = np.searchsorted(stats.labels, labels[labels != 0])
        r = stats.means[idx] - emb[labels != 0]
        d = vector_norm(r, norm)
        diff = stats.means[:, None] - stats.means[None]
        pd = vector_norm(diff, norm)[~np.eye(n_clusters, dtype=bool)]
        ok = np.all(np.abs(d - delta_v) > gap) and np.all(np.abs(pd - 2 * delta_d) > gap)
        ok = ok and np.all(vector_norm(stats.means, norm) > gap) and np.all(d > gap)
        if norm == "l1":
            ok = ok and np.all(np.abs(r) > gap) and np.all(np.abs(stats.means) > gap)
            ok = ok and np.all(np.abs(diff[~np.eye(n_clusters, dtype=bool)]) > gap)
        if ok and np.any(d > delta_v) and np.any(pd < 2 * delta_d):
            return emb, labels


def sample_ball(rng, n, dims, radius):
    v = rng.normal(size=(n, dims))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dims)
    return v * r[:, None]


def zero_loss_fixture(rng, delta_v, delta_d, shape=(12, 12), dims=2, n_clusters=4, spread=0.95, center_gap=1.0):
    """Embeddings with l_var = l_dist = 0: members strictly inside delta_v of
    their cluster mean, means at least ``2 * delta_d * center_gap`` apart."""
    labels = random_labels(rng, shape, n_clusters, background=0.2)
    while True:
        centers = rng.uniform(-3 * delta_d, 3 * delta_d, size=(n_clusters, dims)) * max(1, n_clusters / 2)
        pd = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        if np.all(pd[~np.eye(n_clusters, dtype=bool)] > 2 * delta_d * max(center_gap, 1.0) + 1e-6):
            break
    emb = np.zeros(shape + (dims,))
    for k in range(1, n_clusters + 1):
        m = labels == k
        while True:
            pts = sample_ball(rng, int(m.sum()), dims, spread * delta_v)
            pts -= pts.mean(axis=0)
            if np.all(np.linalg.norm(pts, axis=1) < delta_v * (1 - 1e-9)):
                break
        emb[m] = centers[k - 1] + pts
    emb[labels == 0] = rng.normal(scale=10.0, size=(int((labels == 0).sum()), dims))
    return emb, labels, centers
