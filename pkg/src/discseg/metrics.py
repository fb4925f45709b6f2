"""Instance segmentation metrics: Symmetric Best Dice, |DiC|, AP at IoU 0.5.

An instance set is a list of boolean masks of one image shape.  Use
``instance_masks`` to derive one from a label map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def instance_masks(labels: np.ndarray) -> list[np.ndarray]:
    """One boolean mask per distinct nonzero label, in ascending label order."""
    labels = np.asarray(labels)
    return [labels == k for k in np.unique(labels) if k != 0]


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|a & b| / (|a| + |b|); two empty masks agree perfectly."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def _stack(masks):
    return np.stack([np.asarray(m, dtype=bool).reshape(-1) for m in masks]).astype(np.float64)


def _overlaps(pred, gt):
    """Intersection counts and sizes for two non-empty mask lists."""
    p, g = _stack(pred), _stack(gt)
    if p.shape[1] != g.shape[1]:
        raise ValueError("prediction and ground truth masks differ in shape")
    return p @ g.T, p.sum(axis=1), g.sum(axis=1)


def best_dice(a: list, b: list) -> float:
    """Mean over objects in ``a`` of their best dice against any object in ``b``."""
    if len(a) == 0:
        return 1.0 if len(b) == 0 else 0.0
    if len(b) == 0:
        return 0.0
    inter, sa, sb = _overlaps(a, b)
    d = 2.0 * inter / (sa[:, None] + sb[None, :])
    return float(d.max(axis=1).mean())


def symmetric_best_dice(pred: list, gt: list) -> float:
    if len(pred) == 0 and len(gt) == 0:
        return 1.0
    if len(pred) == 0 or len(gt) == 0:
        return 0.0
    return min(best_dice(pred, gt), best_dice(gt, pred))


def dic(pred_counts, gt_counts) -> float:
    """|mean(pred_i - gt_i)|: absolute value of the mean count difference."""
    diffs = _count_diffs(pred_counts, gt_counts)
    return abs(float(np.mean(diffs)))


def mean_abs_dic(pred_counts, gt_counts) -> float:
    """mean(|pred_i - gt_i|), the per-image-absolute reading."""
    return float(np.mean(np.abs(_count_diffs(pred_counts, gt_counts))))


def _count_diffs(pred_counts, gt_counts):
    pred_counts = np.asarray(pred_counts, dtype=np.float64)
    gt_counts = np.asarray(gt_counts, dtype=np.float64)
    if pred_counts.shape != gt_counts.shape:
        raise ValueError("count lists must have equal length")
    if pred_counts.size == 0:
        raise ValueError("count lists are empty")
    return pred_counts - gt_counts


def ap50(pred: list, gt: list) -> float:
    """TP / (TP + FP + FN) after greedy one-to-one matching at IoU >= 0.5.

    There are no confidence scores, so predictions are visited largest
    first (stable for equal sizes); each takes the unmatched ground-truth
    object with the highest IoU.  Two empty sets score 1.
    """
    if len(pred) == 0 and len(gt) == 0:
        return 1.0
    if len(pred) == 0 or len(gt) == 0:
        return 0.0
    inter, sp, sg = _overlaps(pred, gt)
    iou = inter / (sp[:, None] + sg[None, :] - inter)
    taken = np.zeros(len(gt), dtype=bool)
    tp = 0
    for i in np.argsort(-sp, kind="stable"):
        cand = np.where(taken, -1.0, iou[i])
        j = int(np.argmax(cand))
        if cand[j] >= 0.5:
            taken[j] = True
            tp += 1
    fp = len(pred) - tp
    fn = len(gt) - tp
    return tp / (tp + fp + fn)


@dataclass
class ImageScore:
    name: str
    sbd: float
    ap50: float
    pred_count: int
    gt_count: int


@dataclass
class MetricReport:
    sbd: float
    dic: float
    dic_abs: float
    ap50: float
    per_image: list[ImageScore] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"{'image':<24} {'sbd':>8} {'ap50':>8} {'pred':>5} {'gt':>5}"]
        for s in self.per_image:
            out.append(f"{s.name:<24} {s.sbd:8.4f} {s.ap50:8.4f} {s.pred_count:5d} {s.gt_count:5d}")
        out.append(f"{'mean':<24} {self.sbd:8.4f} {self.ap50:8.4f}")
        out.append(f"|DiC| = {self.dic:.4f}  mean|DiC| = {self.dic_abs:.4f}")
        return out

    def key_values(self, prefix: str = "") -> dict[str, str]:
        kv = {
            f"{prefix}sbd": repr(self.sbd),
            f"{prefix}dic": repr(self.dic),
            f"{prefix}dic_abs": repr(self.dic_abs),
            f"{prefix}ap50": repr(self.ap50),
            f"{prefix}images": str(len(self.per_image)),
        }
        for s in self.per_image:
            kv[f"{prefix}{s.name}.sbd"] = repr(s.sbd)
            kv[f"{prefix}{s.name}.ap50"] = repr(s.ap50)
            kv[f"{prefix}{s.name}.count"] = f"{s.pred_count}/{s.gt_count}"
        return kv


def evaluate(pred_maps, gt_maps, names=None) -> MetricReport:
    """Per-image SBD and AP50 averaged over images; |DiC| over instance counts."""
    pred_maps, gt_maps = list(pred_maps), list(gt_maps)
    if len(pred_maps) != len(gt_maps) or not pred_maps:
        raise ValueError("need equally many (and at least one) prediction and ground-truth maps")
    names = list(names) if names is not None else [f"image_{i:04d}" for i in range(len(gt_maps))]
    scores = []
    for name, p, g in zip(names, pred_maps, gt_maps):
        if p.shape != g.shape:
            raise ValueError(f"{name}: prediction shape {p.shape} != ground truth {g.shape}")
        pm, gm = instance_masks(p), instance_masks(g)
        scores.append(ImageScore(name, symmetric_best_dice(pm, gm), ap50(pm, gm), len(pm), len(gm)))
    pc = [s.pred_count for s in scores]
    gc = [s.gt_count for s in scores]
    return MetricReport(
        sbd=float(np.mean([s.sbd for s in scores])),
        dic=dic(pc, gc),
        dic_abs=mean_abs_dic(pc, gc),
        ap50=float(np.mean([s.ap50 for s in scores])),
        per_image=scores,
    )
