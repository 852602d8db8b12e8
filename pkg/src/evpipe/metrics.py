"""Detection and classification metrics.

Matching and AP follow the COCO protocol: per image and class, detections
are taken in descending score order and each claims the unmatched ground
truth box with the highest IoU at or above the threshold. AP is the mean of
the monotone precision envelope sampled at 101 recall points. Ties in score
keep input order throughout; ties in IoU go to the lower ground-truth index.

Ground truth may be passed as a mapping ``{image_id: [Annotation, ...]}`` or
as a flat list of objects carrying an ``image_id`` attribute (missing ids
all fall into one image). Detections are :class:`~evpipe.model.Detection`.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from evpipe.model import CLASS_NAMES, ClassId, bbox_to_xyxy

COCO_IOU_THRESHOLDS = np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1, endpoint=True)
RECALL_POINTS = np.linspace(0.0, 1.00, int(np.round((1.00 - 0.0) / 0.01)) + 1, endpoint=True)
DEFAULT_CLASSES = (int(ClassId.CRACK), int(ClassId.SPALLING))


def iou(a, b) -> float:
    """Intersection over union of two (bx, by, w, h) boxes."""
    ax0, ay0, ax1, ay1 = bbox_to_xyxy(a)
    bx0, by0, bx1, by1 = bbox_to_xyxy(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    a = np.array([bbox_to_xyxy(b) for b in boxes_a], dtype=np.float64).reshape(-1, 4)
    b = np.array([bbox_to_xyxy(x) for x in boxes_b], dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _score_order(dets) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def nms(dets, iou_thr: float = 0.4):
    """Greedy per-image, per-class suppression of boxes with IoU > iou_thr.

    Survivors are returned in input order.
    """
    dets = list(dets)
    keep = [False] * len(dets)
    groups: dict = {}
    for i, d in enumerate(dets):
        groups.setdefault((getattr(d, "image_id", None), d.class_id), []).append(i)
    for idx in groups.values():
        idx = sorted(idx, key=lambda i: -dets[i].score)
        ious = iou_matrix([dets[i].bbox for i in idx], [dets[i].bbox for i in idx])
        alive = np.ones(len(idx), dtype=bool)
        for a in range(len(idx)):
            if not alive[a]:
                continue
            keep[idx[a]] = True
            alive[a + 1 :] &= ~(ious[a, a + 1 :] > iou_thr)
    return [d for d, k in zip(dets, keep) if k]


@dataclass(frozen=True)
class MatchResult:
    det_tp: tuple[bool, ...]  # aligned with the input detection order
    gt_matched: tuple[bool, ...]
    det_gt: tuple[int, ...] = field(default=())  # matched gt index or -1

    @property
    def tp(self) -> int:
        return sum(self.det_tp)

    @property
    def fp(self) -> int:
        return len(self.det_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


def match_detections(dets, gts, iou_thr: float) -> MatchResult:
    """Greedy matching of one image's detections to its ground truth (single class)."""
    dets, gts = list(dets), list(gts)
    det_gt = [-1] * len(dets)
    matched = [False] * len(gts)
    if dets and gts:
        ious = iou_matrix([d.bbox for d in dets], [g.bbox for g in gts])
        for i in _score_order(dets):
            best, best_iou = -1, -1.0
            for j in range(len(gts)):
                if matched[j]:
                    continue
                v = ious[i, j]
                if v >= iou_thr and v > best_iou:
                    best, best_iou = j, v
            if best >= 0:
                matched[best] = True
                det_gt[i] = best
    return MatchResult(tuple(g >= 0 for g in det_gt), tuple(matched), tuple(det_gt))


def _group(items) -> dict:
    if isinstance(items, Mapping):
        return {k: list(v) for k, v in items.items()}
    out: dict = {}
    for it in items:
        out.setdefault(getattr(it, "image_id", None), []).append(it)
    return out


def _of_class(grouped: dict, class_id) -> dict:
    if class_id is None:
        return grouped
    return {k: [x for x in v if x.class_id == class_id] for k, v in grouped.items()}


def _accumulate(dets, gts, iou_thr, class_id=None):
    """(scores, tp flags, number of gts) pooled over images, in input order."""
    dets = [d for d in dets if class_id is None or d.class_id == class_id]
    gg = _of_class(_group(gts), class_id)
    n_gt = sum(len(v) for v in gg.values())
    by_image: dict = {}
    for i, d in enumerate(dets):
        by_image.setdefault(getattr(d, "image_id", None), []).append(i)
    flags = np.zeros(len(dets), dtype=bool)
    for image_id, idx in by_image.items():
        res = match_detections([dets[i] for i in idx], gg.get(image_id, []), iou_thr)
        flags[idx] = res.det_tp
    return np.array([d.score for d in dets], dtype=np.float64), flags, n_gt


def ap_from_flags(scores, tp_flags, n_gt: int) -> float:
    """101-point interpolated AP from pooled detection scores and TP flags."""
    if n_gt == 0:
        return float("nan")
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="mergesort")
    tp = np.asarray(tp_flags, dtype=np.float64)[order]
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return math.fsum(sampled) / len(RECALL_POINTS)


def average_precision(dets, gts, iou_thr: float = 0.5, class_id=None) -> float:
    """AP at one IoU threshold; NaN when there is no ground truth to find."""
    scores, flags, n_gt = _accumulate(dets, gts, iou_thr, class_id)
    return ap_from_flags(scores, flags, n_gt)


def _nanmean(values) -> float:
    vals = [v for v in values if not np.isnan(v)]
    return float(np.mean(vals)) if vals else 0.0


def class_ap(dets, gts, class_id, thresholds=COCO_IOU_THRESHOLDS) -> float:
    aps = [average_precision(dets, gts, float(t), class_id) for t in np.atleast_1d(thresholds)]
    return float(np.mean(aps)) if aps and not np.isnan(aps[0]) else float("nan")


def map_at(dets, gts, thresholds=COCO_IOU_THRESHOLDS, classes=DEFAULT_CLASSES) -> float:
    """Mean over classes (with ground truth) of the mean AP over thresholds."""
    if len(np.atleast_1d(thresholds)) == 0:
        raise ValueError("need at least one IoU threshold")
    return _nanmean(class_ap(dets, gts, c, thresholds) for c in classes)


def counts_at(dets, gts, iou_thr: float = 0.5, class_id=None) -> tuple[int, int, int]:
    """(TP, FP, FN) pooled over images."""
    dg = _of_class(_group(dets), class_id)
    gg = _of_class(_group(gts), class_id)
    tp = fp = 0
    for image_id, ds in dg.items():
        res = match_detections(ds, gg.get(image_id, []), iou_thr)
        tp += res.tp
        fp += res.fp
    n_gt = sum(len(v) for v in gg.values())
    return tp, fp, n_gt - tp


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    # same value as 2PR/(P+R), without the intermediate rounding
    return 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0


def f1_at_iou50(dets, gts, class_id=None, conf_thr: float | None = None) -> float:
    if conf_thr is not None:
        dets = [d for d in dets if d.score >= conf_thr]
    return f1_from_counts(*counts_at(dets, gts, 0.5, class_id))


def accuracy(preds, truth) -> float:
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth) or not preds:
        raise ValueError("accuracy needs two non-empty label lists of equal length")
    return sum(int(a) == int(b) for a, b in zip(preds, truth)) / len(preds)


METRIC_KEYS = ("mAP@0.5", "mAP@0.5:0.95", "F1@0.5", "precision", "recall")


@dataclass
class EvalReport:
    per_class: dict  # class name -> {metric: value or None}
    overall: dict  # metric -> value
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"All": self.overall, **self.per_class, "settings": self.settings}

    def table(self) -> str:
        cols = ["All", *self.per_class]
        width = max(len(k) for k in METRIC_KEYS) + 2
        lines = ["metric".ljust(width) + "".join(c.rjust(10) for c in cols)]
        for key in METRIC_KEYS:
            row = key.ljust(width)
            for c in cols:
                v = self.overall[key] if c == "All" else self.per_class[c][key]
                row += ("-" if v is None else f"{v:.4f}").rjust(10)
            lines.append(row)
        return "\n".join(lines)


def evaluate(
    dets,
    gts,
    conf_thr: float | None = 0.2,
    nms_iou: float | None = 0.4,
    classes=DEFAULT_CLASSES,
) -> EvalReport:
    """Full report: AP metrics on every (post-NMS) detection, F1/P/R after the confidence cut."""
    dets = list(dets)
    if nms_iou is not None:
        dets = nms(dets, nms_iou)
    confident = dets if conf_thr is None else [d for d in dets if d.score >= conf_thr]
    per_class = {}
    for c in classes:
        has_gt = sum(len(v) for v in _of_class(_group(gts), c).values()) > 0
        ap50 = class_ap(dets, gts, c, [0.5])
        ap = class_ap(dets, gts, c)
        tp, fp, fn = counts_at(confident, gts, 0.5, c)
        p, r = precision_recall(tp, fp, fn)
        per_class[CLASS_NAMES.get(c, str(c))] = {
            "mAP@0.5": None if not has_gt else ap50,
            "mAP@0.5:0.95": None if not has_gt else ap,
            "F1@0.5": None if not has_gt else f1_from_counts(tp, fp, fn),
            "precision": None if not has_gt else p,
            "recall": None if not has_gt else r,
            "tp": tp,
            "fp": fp,
            "fn": fn,
        }
    overall = {}
    for key in METRIC_KEYS:
        vals = [v[key] for v in per_class.values() if v[key] is not None]
        overall[key] = float(np.mean(vals)) if vals else 0.0
    settings = {"conf_thr": conf_thr, "nms_iou": nms_iou, "classes": list(classes)}
    return EvalReport(per_class, overall, settings)
