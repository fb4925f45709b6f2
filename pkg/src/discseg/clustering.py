"""Turn pixel embeddings into discrete instances.

Two strategies:

* ``cluster_by_known_centers``: threshold around given centers (used with
  ground-truth instance means for the clustering ablation).
* ``mean_shift_cluster``: seed at an unlabeled pixel, threshold around it,
  re-threshold around the mean of the selection until the mean settles,
  label the selection, repeat.

Membership is always the strict test ``||x - center|| < bandwidth``.

The default bandwidth, 1.0, is twice the default pull margin: trained
embeddings pile up on the pull margin itself, where a strict test at the
margin is fragile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from discseg.loss import NORMS, vector_norm
from discseg.rng import XorShift64Star

SEED_POLICIES = ("scan", "random")


@dataclass(frozen=True)
class ClusterConfig:
    bandwidth: float = 1.0
    # None: 0.5% of the foreground pixel count, at least 1
    min_cluster_size: int | None = None
    max_shift_iters: int = 100
    shift_tolerance: float = 1e-4
    seed_policy: str = "scan"
    seed: int = 0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.min_cluster_size is not None and self.min_cluster_size < 0:
            raise ValueError("min_cluster_size must be >= 0")
        if self.max_shift_iters < 1:
            raise ValueError("max_shift_iters must be >= 1")
        if not self.shift_tolerance > 0:
            raise ValueError("shift_tolerance must be positive")
        if self.seed_policy not in SEED_POLICIES:
            raise ValueError(f"seed_policy must be one of {SEED_POLICIES}, got {self.seed_policy!r}")

    def resolved_min_size(self, n_foreground: int) -> int:
        if self.min_cluster_size is not None:
            return self.min_cluster_size
        return max(1, int(0.005 * n_foreground))


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (H, W) int, 1..K, 0 = unassigned / background
    centers: np.ndarray  # (K, D)
    sizes: np.ndarray  # (K,)

    @property
    def num_instances(self) -> int:
        return len(self.sizes)


def _empty(shape, dims) -> ClusterAssignment:
    return ClusterAssignment(np.zeros(shape, dtype=np.int64), np.zeros((0, dims)), np.zeros(0, dtype=np.int64))


def _check(emb, fg, norm):
    if emb.ndim != 3 or fg.shape != emb.shape[:2]:
        raise ValueError(f"foreground mask {fg.shape} does not match embedding map {emb.shape}")
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}")
    return np.asarray(fg, dtype=bool)


def threshold_around(emb: np.ndarray, fg: np.ndarray, center, bandwidth: float, norm: str = "l2") -> np.ndarray:
    """Foreground pixels whose embedding lies strictly within ``bandwidth`` of ``center``."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    fg = _check(emb, fg, norm)
    dist = vector_norm(np.asarray(emb, dtype=np.float64) - np.asarray(center, dtype=np.float64), norm)
    return fg & (dist < bandwidth)


def cluster_by_known_centers(emb, fg, centers, bandwidth: float, norm: str = "l2") -> ClusterAssignment:
    """Assign each foreground pixel to its nearest center if that center is
    within ``bandwidth``.

    Ties go to the lowest center index.  Centers that end up with no pixels
    are dropped and the remaining labels renumbered 1..K in center order.
    """
    fg = _check(emb, fg, norm)
    D = emb.shape[2]
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, D)
    if len(centers) == 0 or not fg.any():
        return _empty(fg.shape, D)
    x = np.asarray(emb, dtype=np.float64)[fg]
    dist = vector_norm(x[:, None, :] - centers[None, :, :], norm)
    nearest = np.argmin(dist, axis=1)  # first minimum on ties
    inside = dist[np.arange(len(x)), nearest] < bandwidth
    sizes = np.bincount(nearest[inside], minlength=len(centers))
    keep = np.flatnonzero(sizes)
    remap = np.zeros(len(centers), dtype=np.int64)
    remap[keep] = np.arange(1, len(keep) + 1)
    labels = np.zeros(fg.shape, dtype=np.int64)
    labels[fg] = np.where(inside, remap[nearest], 0)
    return ClusterAssignment(labels, centers[keep], sizes[keep])


def _seed_order(n: int, config: ClusterConfig) -> list[int]:
    if config.seed_policy == "scan":
        return list(range(n))
    return XorShift64Star(config.seed).permutation(n)


def mean_shift_cluster(emb, fg, config: ClusterConfig | None = None, norm: str = "l2") -> ClusterAssignment:
    """Flat-kernel mean-shift clustering of the foreground embeddings.

    Seeds come in row-major order (``scan``) or a seeded random order.  A
    pixel claimed by an earlier cluster keeps its label even if a later
    threshold selects it again, and is never used as a seed.  Selections
    smaller than the minimum cluster size are dissolved to label 0.  Each
    seed pixel always joins its own cluster, so every outer iteration
    retires at least one pixel.
    """
    config = config or ClusterConfig()
    fg = _check(emb, fg, norm)
    D = emb.shape[2]
    if not fg.any():
        return _empty(fg.shape, D)

    x = np.asarray(emb, dtype=np.float64)[fg]
    n = len(x)
    b = config.bandwidth
    min_size = config.resolved_min_size(n)
    visited = np.zeros(n, dtype=bool)
    claim = np.zeros(n, dtype=np.int64)
    centers, sizes = [], []

    for seed in _seed_order(n, config):
        if visited[seed]:
            continue
        center = x[seed]
        for _ in range(config.max_shift_iters):
            selected = vector_norm(x - center, norm) < b
            if not selected.any():
                break
            new_center = x[selected].mean(axis=0)
            moved = vector_norm(new_center - center, norm)
            center = new_center
            if moved < config.shift_tolerance:
                break
        members = vector_norm(x - center, norm) < b
        members[seed] = True
        members &= ~visited
        visited |= members
        count = int(members.sum())
        if count < min_size:
            continue
        claim[members] = len(sizes) + 1
        centers.append(center)
        sizes.append(count)

    labels = np.zeros(fg.shape, dtype=np.int64)
    labels[fg] = claim
    return ClusterAssignment(
        labels,
        np.array(centers, dtype=np.float64).reshape(-1, D),
        np.array(sizes, dtype=np.int64),
    )


def cluster_per_class(emb, semantic_labels, config: ClusterConfig | None = None, norm: str = "l2") -> ClusterAssignment:
    """Mean-shift independently inside each nonzero semantic class; instance
    labels are offset so they stay unique across classes."""
    labels = np.zeros(semantic_labels.shape, dtype=np.int64)
    centers, sizes = [], []
    for cls in np.unique(semantic_labels):
        if cls == 0:
            continue
        part = mean_shift_cluster(emb, semantic_labels == cls, config, norm)
        labels[part.labels > 0] = part.labels[part.labels > 0] + len(sizes)
        centers.extend(part.centers)
        sizes.extend(part.sizes)
    return ClusterAssignment(labels, np.array(centers).reshape(-1, emb.shape[2]), np.array(sizes, dtype=np.int64))
