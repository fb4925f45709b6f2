"""Pixel-embedding instance segmentation with a discriminative loss.

Submodules:

- ``loss``: variance / distance / regularization terms and their gradient
- ``clustering``: threshold and mean-shift post-processing
- ``synthdata``: scattered-sticks scene generator and coordinate maps
- ``toynet``: small numpy convnet, manual backprop, Adam
- ``metrics``: SBD, |DiC|, AP at IoU 0.5
- ``cli``: ``generate`` / ``train`` / ``infer`` / ``eval`` verbs
"""

from discseg.loss import (
    ClusterStats,
    LossBreakdown,
    LossConfig,
    cluster_means,
    discriminative_loss,
    loss_backward,
    per_class_loss,
    per_class_loss_backward,
)
from discseg.clustering import (
    ClusterAssignment,
    ClusterConfig,
    cluster_by_known_centers,
    mean_shift_cluster,
    threshold_around,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment",
    "ClusterConfig",
    "ClusterStats",
    "LossBreakdown",
    "LossConfig",
    "cluster_by_known_centers",
    "cluster_means",
    "discriminative_loss",
    "loss_backward",
    "mean_shift_cluster",
    "per_class_loss",
    "per_class_loss_backward",
    "threshold_around",
]
