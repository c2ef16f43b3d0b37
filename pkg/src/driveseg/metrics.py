"""Segmentation evaluation: confusion counts, IoU, P/R/F1, max F-measure.

Aggregation is micro-averaged: confusion counts are summed over all images
before any ratio is formed, so aggregate metrics are invariant to image
order and batching. mIoU averages the foreground and background IoU of the
binary task. The max F-measure sweeps a threshold grid over the probability
maps with counts likewise summed across the whole evaluation set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError

DEFAULT_THRESHOLDS = np.arange(1, 256) / 256.0  # 255 evenly spaced in (0, 1)


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts; inputs must be binary arrays of the same shape."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} mask contains non-binary values")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int((p & g).sum()),
        fp=int((p & ~g).sum()),
        fn=int((~p & g).sum()),
        tn=int((~p & ~g).sum()),
    )


def _ratio(num: int, denom: int, gt_empty: bool, pred_empty: bool) -> float:
    """Zero-denominator convention: 1.0 iff both sets are empty, else 0.0."""
    if denom > 0:
        return num / denom
    return 1.0 if (gt_empty and pred_empty) else 0.0


def compute_metrics(counts: ConfusionCounts) -> dict[str, float]:
    """IoU per class, mIoU, precision, recall, F1 from pixel counts."""
    gt_empty = counts.tp + counts.fn == 0
    pred_empty = counts.tp + counts.fp == 0
    gt_full = counts.tn + counts.fp == 0
    pred_full = counts.tn + counts.fn == 0
    iou_fg = _ratio(counts.tp, counts.tp + counts.fp + counts.fn,
                    gt_empty, pred_empty)
    iou_bg = _ratio(counts.tn, counts.tn + counts.fp + counts.fn,
                    gt_full, pred_full)
    precision = _ratio(counts.tp, counts.tp + counts.fp, gt_empty, pred_empty)
    recall = _ratio(counts.tp, counts.tp + counts.fn, gt_empty, pred_empty)
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    return {
        "iou_fg": iou_fg,
        "iou_bg": iou_bg,
        "miou": (iou_fg + iou_bg) / 2.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def threshold_counts(probs: np.ndarray, gt: np.ndarray,
                     thresholds: np.ndarray) -> np.ndarray:
    """Per-threshold (tp, fp, fn) counts for one probability map.

    Binarization is ``probs > t``. Returns an int array [len(thresholds), 3]
    suitable for summation across images.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    g = np.asarray(gt).reshape(-1).astype(bool)
    if probs.shape != g.shape:
        raise ShapeError(f"probs size {probs.shape} != gt size {g.shape}")
    order = np.argsort(probs, kind="stable")
    sorted_probs = probs[order]
    sorted_gt = g[order]
    n = probs.size
    n_pos = int(g.sum())
    # pixels with prob > t: suffix of the sorted array
    cum_pos = np.concatenate([[0], np.cumsum(sorted_gt)])
    first_above = np.searchsorted(sorted_probs, thresholds, side="right")
    counts = np.empty((len(thresholds), 3), dtype=np.int64)
    for i, idx in enumerate(first_above):
        pred_pos = n - idx
        tp = n_pos - int(cum_pos[idx])
        counts[i] = (tp, pred_pos - tp, n_pos - tp)
    return counts


def max_f_from_counts(counts: np.ndarray,
                      thresholds: np.ndarray) -> tuple[float, float]:
    """Best F1 over summed per-threshold counts, with its threshold."""
    tp = counts[:, 0].astype(np.float64)
    fp = counts[:, 1].astype(np.float64)
    fn = counts[:, 2].astype(np.float64)
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    # Everything empty at this threshold means a perfect (empty) match.
    f1 = np.where((denom == 0), 1.0, f1)
    best = int(np.argmax(f1))
    return float(f1[best]), float(thresholds[best])


def max_f_score(probs: np.ndarray, gt: np.ndarray,
                thresholds: np.ndarray | None = None) -> tuple[float, float]:
    """Threshold-swept max F-measure of one map (or a concatenated set)."""
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    thresholds = np.asarray(thresholds, dtype=np.float64)
    return max_f_from_counts(threshold_counts(probs, gt, thresholds), thresholds)


@dataclass
class MetricsReport:
    """Per-image records plus micro-averaged aggregate and max F-measure."""

    per_image: list[dict[str, float]] = field(default_factory=list)
    aggregate: dict[str, float] = field(default_factory=dict)
    max_f: float = 0.0
    max_f_threshold: float = 0.5
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)

    def render(self) -> str:
        """Structured text: one JSON record per image, then the aggregate."""
        lines = ["# per-image records (micro-averaged aggregate below)"]
        for i, rec in enumerate(self.per_image):
            lines.append(json.dumps({"image": i, **{k: round(v, 6) for k, v in rec.items()}}))
        agg = {k: round(v, 6) for k, v in self.aggregate.items()}
        agg.update(max_f=round(self.max_f, 6),
                   max_f_threshold=round(self.max_f_threshold, 6),
                   tp=self.counts.tp, fp=self.counts.fp,
                   fn=self.counts.fn, tn=self.counts.tn)
        lines.append("# aggregate")
        lines.append(json.dumps(agg))
        return "\n".join(lines) + "\n"


def build_report(pairs: list[tuple[np.ndarray, np.ndarray]],
                 threshold: float = 0.5,
                 thresholds: np.ndarray | None = None) -> MetricsReport:
    """Evaluate (probability map, gt mask) pairs into a MetricsReport."""
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    thresholds = np.asarray(thresholds, dtype=np.float64)
    report = MetricsReport()
    total = ConfusionCounts()
    sweep = np.zeros((len(thresholds), 3), dtype=np.int64)
    for probs, gt in pairs:
        pred = (np.asarray(probs) > threshold).astype(np.uint8)
        counts = confusion(pred, np.asarray(gt).astype(np.uint8))
        total = total + counts
        report.per_image.append(compute_metrics(counts))
        sweep += threshold_counts(probs, gt, thresholds)
    report.counts = total
    report.aggregate = compute_metrics(total)
    report.max_f, report.max_f_threshold = max_f_from_counts(sweep, thresholds)
    return report
