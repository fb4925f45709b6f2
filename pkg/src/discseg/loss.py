"""Discriminative loss on pixel embeddings.

Embeddings are ``(H, W, D)`` arrays and instance labels ``(H, W)`` integer
arrays where 0 marks background.  Background pixels take no part in any
term and receive zero gradient.  All reductions run in float64.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

NORMS = ("l1", "l2")
CLASS_REDUCTIONS = ("sum", "mean")


class MarginWarning(UserWarning):
    """delta_d <= delta_v: thresholding around cluster centers is not guaranteed."""


@dataclass(frozen=True)
class LossConfig:
    delta_v: float = 0.5
    delta_d: float = 1.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.001
    norm: str = "l2"
    # how per_class_loss combines classes
    class_reduction: str = "sum"

    def __post_init__(self):
        if not self.delta_v > 0 or not self.delta_d > 0:
            raise ValueError(f"margins must be positive, got delta_v={self.delta_v}, delta_d={self.delta_d}")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.class_reduction not in CLASS_REDUCTIONS:
            raise ValueError(f"class_reduction must be one of {CLASS_REDUCTIONS}")
        if self.delta_d <= self.delta_v:
            warnings.warn(
                f"delta_d={self.delta_d} <= delta_v={self.delta_v}; embeddings may be closer "
                "to a foreign cluster center than to their own",
                MarginWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class ClusterStats:
    labels: np.ndarray  # (C,) distinct nonzero labels, ascending
    means: np.ndarray  # (C, D)
    counts: np.ndarray  # (C,)

    @property
    def num_clusters(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class LossBreakdown:
    l_var: float
    l_dist: float
    l_reg: float
    total: float

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            self.l_var + other.l_var,
            self.l_dist + other.l_dist,
            self.l_reg + other.l_reg,
            self.total + other.total,
        )

    def scaled(self, factor: float) -> "LossBreakdown":
        return LossBreakdown(self.l_var * factor, self.l_dist * factor, self.l_reg * factor, self.total * factor)


ZERO_LOSS = LossBreakdown(0.0, 0.0, 0.0, 0.0)


def vector_norm(v: np.ndarray, norm: str) -> np.ndarray:
    """Norm along the last axis."""
    if norm == "l2":
        return np.sqrt(np.einsum("...d,...d->...", v, v))
    if norm == "l1":
        return np.abs(v).sum(axis=-1)
    raise ValueError(f"unknown norm {norm!r}")


def norm_gradient(v: np.ndarray, norm: str) -> np.ndarray:
    """d||v||/dv along the last axis; the zero vector gets gradient 0."""
    if norm == "l1":
        return np.sign(v)
    n = vector_norm(v, "l2")[..., None]
    safe = np.where(n > 0, n, 1.0)
    return np.where(n > 0, v / safe, 0.0)


def _check_shapes(emb: np.ndarray, labels: np.ndarray) -> None:
    if emb.ndim != 3:
        raise ValueError(f"embedding map must be (H, W, D), got shape {emb.shape}")
    if labels.shape != emb.shape[:2]:
        raise ValueError(f"label map shape {labels.shape} does not match embedding map {emb.shape[:2]}")
    if np.any(labels < 0):
        raise ValueError("labels must be non-negative")


def _flatten(emb: np.ndarray, labels: np.ndarray):
    """Foreground embeddings, their cluster index, and the stats."""
    _check_shapes(emb, labels)
    flat_labels = labels.reshape(-1)
    fg = flat_labels != 0
    x = np.asarray(emb, dtype=np.float64).reshape(-1, emb.shape[2])[fg]
    uniq, idx = np.unique(flat_labels[fg], return_inverse=True)
    counts = np.bincount(idx, minlength=len(uniq))
    means = np.empty((len(uniq), x.shape[1]), dtype=np.float64)
    for d in range(x.shape[1]):
        means[:, d] = np.bincount(idx, weights=x[:, d], minlength=len(uniq))
    means /= np.maximum(counts, 1)[:, None]
    return fg, x, idx, ClusterStats(uniq, means, counts)


def cluster_means(emb: np.ndarray, labels: np.ndarray) -> ClusterStats:
    """Mean embedding and pixel count of every nonzero label."""
    return _flatten(emb, labels)[3]


def _variance_parts(x, idx, stats, delta_v, norm):
    r = stats.means[idx] - x
    dist = vector_norm(r, norm)
    hinge = np.maximum(dist - delta_v, 0.0)
    return r, hinge


def variance_term(emb, labels, stats: ClusterStats, delta_v: float, norm: str = "l2") -> float:
    """Mean over clusters of the mean squared hinged distance to the cluster center."""
    _check_shapes(emb, labels)
    C = stats.num_clusters
    if C == 0:
        return 0.0
    flat_labels = labels.reshape(-1)
    fg = flat_labels != 0
    x = np.asarray(emb, dtype=np.float64).reshape(-1, emb.shape[2])[fg]
    idx = np.searchsorted(stats.labels, flat_labels[fg])
    _, hinge = _variance_parts(x, idx, stats, delta_v, norm)
    per_cluster = np.bincount(idx, weights=hinge**2, minlength=C) / stats.counts
    return float(per_cluster.sum() / C)


def _pair_parts(means, delta_d, norm):
    diff = means[:, None, :] - means[None, :, :]
    dist = vector_norm(diff, norm)
    hinge = np.maximum(2.0 * delta_d - dist, 0.0)
    np.fill_diagonal(hinge, 0.0)
    return diff, hinge


def distance_term(stats: ClusterStats, delta_d: float, norm: str = "l2") -> float:
    """Hinged push between every ordered pair of distinct cluster centers.

    Zero when there are fewer than two clusters.
    """
    C = stats.num_clusters
    if C <= 1:
        return 0.0
    _, hinge = _pair_parts(stats.means, delta_d, norm)
    return float((hinge**2).sum() / (C * (C - 1)))


def regularization_term(stats: ClusterStats, norm: str = "l2") -> float:
    C = stats.num_clusters
    if C == 0:
        return 0.0
    return float(vector_norm(stats.means, norm).sum() / C)


def _evaluate(emb, labels, config: LossConfig, with_grad: bool):
    fg, x, idx, stats = _flatten(emb, labels)
    C = stats.num_clusters
    D = emb.shape[2]
    grad = np.zeros((labels.size, D), dtype=np.float64) if with_grad else None
    if C == 0:
        return ZERO_LOSS, (grad.reshape(emb.shape) if with_grad else None)

    counts = stats.counts.astype(np.float64)
    r, hinge = _variance_parts(x, idx, stats, config.delta_v, config.norm)
    l_var = float((np.bincount(idx, weights=hinge**2, minlength=C) / counts).sum() / C)

    if C > 1:
        diff, pair_hinge = _pair_parts(stats.means, config.delta_d, config.norm)
        l_dist = float((pair_hinge**2).sum() / (C * (C - 1)))
    else:
        l_dist = 0.0
    l_reg = float(vector_norm(stats.means, config.norm).sum() / C)
    total = config.alpha * l_var + config.beta * l_dist + config.gamma * l_reg
    breakdown = LossBreakdown(l_var, l_dist, l_reg, total)
    if not with_grad:
        return breakdown, None

    # variance: with r_i = mu_c - x_i and g_i = d(hinge_i^2)/d r_i,
    # dL/dx_j = alpha / (C N_c) * (mean_{i in c} g_i - g_j)
    g = (2.0 * hinge)[:, None] * norm_gradient(r, config.norm)
    g_sum = np.empty((C, D))
    for d in range(D):
        g_sum[:, d] = np.bincount(idx, weights=g[:, d], minlength=C)
    scale = config.alpha / (C * counts)
    gx = scale[idx, None] * (g_sum[idx] / counts[idx, None] - g)

    # center-level gradient, spread uniformly over members
    g_mu = np.zeros((C, D))
    if C > 1 and config.beta != 0:
        # both (A, B) and (B, A) contribute -2 h_AB * d||mu_A - mu_B||/d mu_A
        push = pair_hinge[:, :, None] * norm_gradient(diff, config.norm)
        g_mu += config.beta * (-4.0 / (C * (C - 1))) * push.sum(axis=1)
    if config.gamma != 0:
        g_mu += config.gamma / C * norm_gradient(stats.means, config.norm)
    gx += g_mu[idx] / counts[idx, None]

    grad[fg] = gx
    return breakdown, grad.reshape(emb.shape)


def discriminative_loss(emb: np.ndarray, labels: np.ndarray, config: LossConfig | None = None) -> LossBreakdown:
    """alpha * l_var + beta * l_dist + gamma * l_reg over the nonzero labels."""
    return _evaluate(emb, labels, config or LossConfig(), with_grad=False)[0]


def loss_backward(emb: np.ndarray, labels: np.ndarray, config: LossConfig | None = None):
    """Loss breakdown and d(total)/d(emb), including the dependence of each
    cluster mean on its members.

    Returns ``(LossBreakdown, grad)`` with ``grad`` shaped like ``emb``.
    """
    return _evaluate(emb, labels, config or LossConfig(), with_grad=True)


def _class_maps(semantic_labels, instance_labels, emb):
    _check_shapes(emb, instance_labels)
    if semantic_labels.shape != instance_labels.shape:
        raise ValueError(
            f"semantic map shape {semantic_labels.shape} does not match instance map {instance_labels.shape}"
        )
    for cls in np.unique(semantic_labels):
        if cls == 0:
            continue
        yield np.where(semantic_labels == cls, instance_labels, 0)


def per_class_loss_backward(emb, semantic_labels, instance_labels, config: LossConfig | None = None):
    """Loss run independently inside each nonzero semantic class.

    Instances of different classes exert no force on each other.  Classes
    are summed, or averaged when ``config.class_reduction == "mean"``.
    """
    config = config or LossConfig()
    total = ZERO_LOSS
    grad = np.zeros(emb.shape, dtype=np.float64)
    n = 0
    for inst in _class_maps(semantic_labels, instance_labels, emb):
        part, g = loss_backward(emb, inst, config)
        total = total + part
        grad += g
        n += 1
    if config.class_reduction == "mean" and n > 1:
        total = total.scaled(1.0 / n)
        grad /= n
    return total, grad


def per_class_loss(emb, semantic_labels, instance_labels, config: LossConfig | None = None) -> LossBreakdown:
    config = config or LossConfig()
    total = ZERO_LOSS
    n = 0
    for inst in _class_maps(semantic_labels, instance_labels, emb):
        total = total + discriminative_loss(emb, inst, config)
        n += 1
    if config.class_reduction == "mean" and n > 1:
        total = total.scaled(1.0 / n)
    return total
