"""Detection evaluation: per-class AP with 11-point interpolation, mAP, and P/R.

Matching follows the VOC-2007 devkit: detections of one class are visited in
descending score order, each takes the ground truth box it overlaps most, and
scores a true positive only when that overlap reaches the threshold and the
box is still unclaimed.  Everything else, duplicates included, is a false
positive.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .detection import Box, Detection, iou_matrix

logger = logging.getLogger(__name__)

RECALL_POINTS = tuple(i / 10 for i in range(11))


class EvaluationError(ValueError):
    pass


@dataclass
class MatchRecord:
    image: int
    class_id: int
    score: float
    true_positive: bool
    gt_index: int      # index into that image's ground truth list, -1 if none
    iou: float


@dataclass
class EvalReport:
    ap: dict[int, float]                       # only classes with at least one gt box
    mAP: float
    precision: float                           # at the max-F1 score threshold
    recall: float
    threshold: Optional[float]                 # score threshold where F1 peaks
    pr_curves: dict[int, tuple[np.ndarray, np.ndarray]]
    matches: list[MatchRecord] = field(default_factory=list)
    num_gt: dict[int, int] = field(default_factory=dict)
    iou_threshold: float = 0.5

    def summary(self) -> str:
        return f"mAP {self.mAP:.4f}  precision {self.precision:.4f}  recall {self.recall:.4f} (max-F1 point)"


def voc07_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Mean over t in {0, 0.1, ..., 1} of the best precision at recall >= t."""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    total = 0.0
    for t in RECALL_POINTS:
        mask = recall >= t
        total += float(precision[mask].max()) if mask.any() else 0.0
    return total / len(RECALL_POINTS)


def _as_list(per_image: Union[Sequence, Mapping], keys: list) -> list:
    if isinstance(per_image, Mapping):
        return [list(per_image.get(k, [])) for k in keys]
    return [list(v) for v in per_image]


def _image_keys(detections, ground_truth) -> list:
    if isinstance(ground_truth, Mapping) or isinstance(detections, Mapping):
        keys = list(ground_truth) if isinstance(ground_truth, Mapping) else []
        if isinstance(detections, Mapping):
            keys += [k for k in detections if k not in set(keys)]
        return keys
    if len(detections) != len(ground_truth):
        raise EvaluationError(f"{len(detections)} detection lists for {len(ground_truth)} images")
    return list(range(len(ground_truth)))


def _box_array(boxes: Sequence[Box]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)


def match_class(dets: list[tuple[int, Detection]], gts: dict[int, list[tuple[int, Box]]],
                iou_threshold: float) -> list[MatchRecord]:
    """Greedy VOC matching of one class; ``dets`` holds (image, detection)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1].score)
    claimed = {img: np.zeros(len(g), dtype=bool) for img, g in gts.items()}
    gt_arrays = {img: _box_array([b for _, b in g]) for img, g in gts.items()}
    records = []
    for i in order:
        img, det = dets[i]
        garr = gt_arrays.get(img)
        if garr is None or len(garr) == 0:
            records.append(MatchRecord(img, det.class_id, det.score, False, -1, 0.0))
            continue
        ious = iou_matrix(_box_array([det.box]), garr)[0]
        j = int(np.argmax(ious))
        best = float(ious[j])
        gt_index = gts[img][j][0]
        if best >= iou_threshold and not claimed[img][j]:
            claimed[img][j] = True
            records.append(MatchRecord(img, det.class_id, det.score, True, gt_index, best))
        else:
            records.append(MatchRecord(img, det.class_id, det.score, False, gt_index if best > 0 else -1, best))
    return records


def pr_curve(records: Sequence[MatchRecord], num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum([r.true_positive for r in records], dtype=np.float64)
    fp = np.cumsum([not r.true_positive for r in records], dtype=np.float64)
    if len(records) == 0:
        return np.zeros(0), np.zeros(0)
    recall = tp / max(num_gt, 1)
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return recall, precision


def best_f1_point(records: Sequence[MatchRecord], total_gt: int) -> tuple[float, float, Optional[float]]:
    """Precision and recall at the score threshold that maximises F1.

    Thresholds are only placed between distinct scores, so ties are kept
    together.  With no detections or no true positives both values are 0.
    """
    if not records or total_gt == 0:
        return 0.0, 0.0, None
    recs = sorted(records, key=lambda r: -r.score)
    scores = np.array([r.score for r in recs])
    tp = np.cumsum([r.true_positive for r in recs], dtype=np.float64)
    n = np.arange(1, len(recs) + 1, dtype=np.float64)
    cut = np.ones(len(recs), dtype=bool)
    cut[:-1] = scores[1:] != scores[:-1]
    p, r = tp / n, tp / total_gt
    f1 = np.where(p + r > 0, 2 * p * r / np.maximum(p + r, 1e-300), 0.0)
    f1 = np.where(cut, f1, -1.0)
    k = int(np.argmax(f1))
    if f1[k] <= 0:
        return 0.0, 0.0, None
    return float(p[k]), float(r[k]), float(scores[k])


def evaluate(detections: Union[Sequence[Sequence[Detection]], Mapping],
             ground_truth: Union[Sequence[Sequence[tuple[int, Box]]], Mapping],
             num_classes: int, iou_threshold: float = 0.5) -> EvalReport:
    """Score detections against ground truth.

    Both arguments are per-image collections, either sequences aligned by
    index or mappings keyed by image id.  Ground truth entries are
    (class_id, Box) pairs.
    """
    keys = _image_keys(detections, ground_truth)
    dets = _as_list(detections, keys)
    gts = _as_list(ground_truth, keys)
    for img, objs in enumerate(gts):
        for cls, _ in objs:
            if not 1 <= int(cls) <= num_classes:
                raise EvaluationError(f"ground truth class {cls} in image {keys[img]!r} outside 1..{num_classes}")
    for img, ds in enumerate(dets):
        for d in ds:
            if not 1 <= int(d.class_id) <= num_classes:
                raise EvaluationError(f"detection class {d.class_id} in image {keys[img]!r} outside 1..{num_classes}")
            if not np.isfinite(d.score):
                raise EvaluationError(f"non-finite detection score in image {keys[img]!r}")

    ap, curves, num_gt, all_records = {}, {}, {}, []
    for c in range(1, num_classes + 1):
        cls_gts = {img: [(j, b) for j, (cl, b) in enumerate(objs) if cl == c] for img, objs in enumerate(gts)}
        n = sum(len(v) for v in cls_gts.values())
        cls_dets = [(img, d) for img, ds in enumerate(dets) for d in ds if d.class_id == c]
        records = match_class(cls_dets, cls_gts, iou_threshold)
        all_records.extend(records)
        num_gt[c] = n
        recall, precision = pr_curve(records, n)
        curves[c] = (recall, precision)
        if n > 0:
            ap[c] = voc07_ap(recall, precision) if len(records) else 0.0
    if ap:
        mAP = float(np.mean(list(ap.values())))
    else:
        logger.warning("no ground truth boxes; mAP reported as 0")
        mAP = 0.0
    precision, recall, thr = best_f1_point(all_records, sum(num_gt.values()))
    if isinstance(ground_truth, Mapping) or isinstance(detections, Mapping):
        for r in all_records:
            r.image = keys[r.image]
    return EvalReport(ap, mAP, precision, recall, thr, curves, all_records, num_gt, iou_threshold)


def format_table(report: EvalReport, class_names: Optional[Mapping[int, str]] = None) -> str:
    names = class_names or {}
    rows = [("class", "gt", "AP")]
    for c in sorted(report.num_gt):
        ap = report.ap.get(c)
        rows.append((names.get(c, str(c)), str(report.num_gt[c]), "-" if ap is None else f"{ap:.4f}"))
    rows.append(("mAP", "", f"{report.mAP:.4f}"))
    width = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(width[i]) for i, cell in enumerate(r)).rstrip() for r in rows]
    thr = "n/a" if report.threshold is None else f"{report.threshold:.4f}"
    lines.append(f"precision {report.precision:.4f}  recall {report.recall:.4f}  "
                 f"(max-F1 score threshold {thr}, IoU {report.iou_threshold})")
    return "\n".join(lines) + "\n"


def write_csv(report: EvalReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "ap"])
        for c in sorted(report.ap):
            w.writerow([c, repr(report.ap[c])])
        w.writerow(["mAP", repr(report.mAP)])
