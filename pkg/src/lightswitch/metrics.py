"""Success-rate confidence intervals and detection metrics (AP, mAP, P/R)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bbox import BoundingBox
from .errors import InvalidCounts

Z95 = 1.96
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


def success_rate_ci(n_success: int, n_attempt: int, method: str = "wald", z: float = Z95):
    """Success rate with a 95% interval, returned as ``(sr, lo, hi)`` fractions.

    ``wald`` is the normal approximation clamped to [0, 1]; it collapses to a
    point at 0 or n successes. ``wilson`` is the score interval.
    """
    if n_attempt < 1 or not 0 <= n_success <= n_attempt:
        raise InvalidCounts(f"invalid counts {n_success}/{n_attempt}")
    p = n_success / n_attempt
    if method == "wald":
        half = z * math.sqrt(p * (1 - p) / n_attempt)
        return p, max(0.0, p - half), min(1.0, p + half)
    if method == "wilson":
        denom = 1 + z * z / n_attempt
        mid = (p + z * z / (2 * n_attempt)) / denom
        half = z * math.sqrt(p * (1 - p) / n_attempt + z * z / (4 * n_attempt ** 2)) / denom
        return p, max(0.0, mid - half), min(1.0, mid + half)
    raise ValueError(f"unknown interval method {method!r}")


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    bbox: BoundingBox
    label: str = "switch"
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionRecord":
        return cls(str(d["image_id"]), BoundingBox(*d["bbox"]), str(d.get("label", "switch")),
                   float(d.get("confidence", 1.0)))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.width * a.height + b.width * b.height - inter
    return inter / union


def _match(preds: Sequence[DetectionRecord], gts: Sequence[DetectionRecord], thr: float) -> list[bool]:
    """TP flags for predictions already sorted by descending confidence.

    Each prediction takes the unmatched ground truth of the same image and
    label with the highest IoU, provided that IoU reaches ``thr``.
    """
    by_key: dict[tuple, list[int]] = {}
    for j, g in enumerate(gts):
        by_key.setdefault((g.image_id, g.label), []).append(j)
    used = [False] * len(gts)
    flags = []
    for p in preds:
        best, best_iou = -1, thr
        for j in by_key.get((p.image_id, p.label), []):
            if used[j]:
                continue
            o = iou(p.bbox, gts[j].bbox)
            if o >= best_iou and (best < 0 or o > best_iou):
                best, best_iou = j, o
        if best >= 0:
            used[best] = True
        flags.append(best >= 0)
    return flags


def _sorted_preds(preds):
    # stable: equal confidences keep input order
    return sorted(preds, key=lambda p: -p.confidence)


def _ap_single_class(preds, gts, thr: float) -> float:
    if not gts:
        return 0.0
    preds = _sorted_preds(preds)
    flags = _match(preds, gts, thr)
    tp = np.cumsum(flags, dtype=float)
    fp = np.cumsum([not f for f in flags], dtype=float)
    recall = tp / len(gts)
    precision = tp / np.maximum(tp + fp, 1e-300)
    # all-points interpolation with a monotone precision envelope
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(preds: Sequence[DetectionRecord], gts: Sequence[DetectionRecord],
                      iou_thresh: float = 0.5) -> float:
    """Mean over labels of the per-label AP; 0 when there is nothing to score."""
    labels = sorted({r.label for r in gts} | {r.label for r in preds})
    if not labels:
        return 0.0
    aps = [_ap_single_class([p for p in preds if p.label == c], [g for g in gts if g.label == c], iou_thresh)
           for c in labels]
    return float(np.mean(aps))


def precision_recall(preds, gts, conf_thresh: float = 0.5, iou_thresh: float = 0.5) -> tuple[float, float]:
    kept = _sorted_preds([p for p in preds if p.confidence >= conf_thresh])
    tp = sum(_match(kept, gts, iou_thresh))
    precision = tp / len(kept) if kept else 0.0
    recall = tp / len(gts) if gts else 0.0
    return precision, recall


def detection_summary(preds, gts) -> dict:
    map50 = average_precision(preds, gts, 0.5)
    map50_95 = float(np.mean([average_precision(preds, gts, t) for t in IOU_THRESHOLDS]))
    precision, recall = precision_recall(preds, gts)
    return {"map50": map50, "map50_95": map50_95, "precision": precision, "recall": recall}


def load_records(path) -> list[DetectionRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(DetectionRecord.from_dict(json.loads(line)))
    return out
