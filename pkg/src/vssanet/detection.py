"""Anchors, ground-truth matching, the multi-task loss, decoding and NMS.

Boxes are (xmin, ymin, xmax, ymax) in input-image pixels.  Box offsets use the
SSD parameterisation without variance scaling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .autodiff import ops

logger = logging.getLogger(__name__)

ASPECT_RATIOS = (1.0, 2.0, 3.0, 1.0 / 2.0, 1.0 / 3.0)


@dataclass(frozen=True)
class Box:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin


@dataclass
class Detection:
    box: Box
    class_id: int
    score: float


@dataclass
class AnchorSet:
    """Anchors as parallel arrays; row i of ``boxes`` is (cx, cy, w, h)."""

    boxes: np.ndarray
    level: np.ndarray
    cell: np.ndarray        # (y, x) within its level
    ratio_index: np.ndarray

    def __len__(self) -> int:
        return len(self.boxes)

    def corners(self) -> np.ndarray:
        return cxcywh_to_corners(self.boxes)


@dataclass
class MatchResult:
    labels: np.ndarray      # [M] int, 0 = background
    targets: np.ndarray     # [M, 4] offsets, zero where label == 0
    matched_gt: np.ndarray  # [M] int, -1 where unmatched

    @property
    def num_positive(self) -> int:
        return int((self.labels > 0).sum())


def level_scales(levels: int, min_scale: float = 0.2, max_scale: float = 0.95) -> list[float]:
    if levels == 1:
        return [min_scale]
    return [min_scale + (max_scale - min_scale) * k / (levels - 1) for k in range(levels)]


def generate_anchors(pyramid_sizes: Sequence[tuple[int, int]], input_size, ratios: Sequence[float] = ASPECT_RATIOS,
                     min_scale: float = 0.2, max_scale: float = 0.95) -> AnchorSet:
    """Anchors for fine-to-coarse levels; cells row-major, then ratios."""
    if not pyramid_sizes:
        raise ValueError("generate_anchors needs at least one pyramid level")
    in_h, in_w = (input_size, input_size) if np.isscalar(input_size) else input_size
    side = math.sqrt(in_h * in_w)
    scales = level_scales(len(pyramid_sizes), min_scale, max_scale)
    boxes, level, cell, ridx = [], [], [], []
    for k, ((H, W), s) in enumerate(zip(pyramid_sizes, scales)):
        ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        cy = ((ys + 0.5) * in_h / H).reshape(-1)
        cx = ((xs + 0.5) * in_w / W).reshape(-1)
        n = H * W
        R = len(ratios)
        w = np.array([s * side * math.sqrt(r) for r in ratios])
        h = np.array([s * side / math.sqrt(r) for r in ratios])
        b = np.empty((n, R, 4))
        b[:, :, 0] = cx[:, None]
        b[:, :, 1] = cy[:, None]
        b[:, :, 2] = w[None, :]
        b[:, :, 3] = h[None, :]
        boxes.append(b.reshape(-1, 4))
        level.append(np.full(n * R, k))
        cell.append(np.repeat(np.stack([ys.reshape(-1), xs.reshape(-1)], axis=1), R, axis=0))
        ridx.append(np.tile(np.arange(R), n))
    return AnchorSet(np.concatenate(boxes), np.concatenate(level), np.concatenate(cell), np.concatenate(ridx))


def cxcywh_to_corners(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def corners_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    wh = b[..., 2:] - b[..., :2]
    return np.concatenate([b[..., :2] + wh / 2, wh], axis=-1)


def iou(a, b) -> float:
    """IoU of two boxes given as Box or (xmin, ymin, xmax, ymax)."""
    a = a.as_tuple() if isinstance(a, Box) else a
    b = b.as_tuple() if isinstance(b, Box) else b
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, [n, 4] x [m, 4] corners -> [n, m]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def encode_boxes(gt: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Offsets of corner boxes ``gt`` relative to (cx, cy, w, h) ``anchors``."""
    g = corners_to_cxcywh(gt)
    a = np.asarray(anchors, dtype=np.float64)
    return np.concatenate([(g[..., :2] - a[..., :2]) / a[..., 2:], np.log(g[..., 2:] / a[..., 2:])], axis=-1)


def decode_boxes(deltas: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_boxes`; returns corner boxes."""
    d = np.asarray(deltas, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    c = d[..., :2] * a[..., 2:] + a[..., :2]
    wh = np.exp(np.clip(d[..., 2:], -20.0, 20.0)) * a[..., 2:]
    return cxcywh_to_corners(np.concatenate([c, wh], axis=-1))


def clip_boxes(boxes: np.ndarray, image_hw) -> np.ndarray:
    h, w = (image_hw, image_hw) if np.isscalar(image_hw) else image_hw
    out = np.array(boxes, dtype=np.float64)
    out[..., 0::2] = np.clip(out[..., 0::2], 0, w)
    out[..., 1::2] = np.clip(out[..., 1::2], 0, h)
    return out


def match(anchors: AnchorSet, gt_boxes, gt_labels, pos_threshold: float = 0.5,
          image_hw=None) -> MatchResult:
    """Assign each anchor a class label and regression target.

    An anchor is positive when its best IoU with any ground truth reaches
    ``pos_threshold``; it takes the argmax ground truth.  Afterwards every
    ground truth, in order, claims its best still-unclaimed anchor (lowest
    index on ties), overriding the threshold assignment.
    """
    M = len(anchors)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gl = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    labels = np.zeros(M, dtype=np.int64)
    targets = np.zeros((M, 4))
    matched = np.full(M, -1, dtype=np.int64)
    if len(gt) == 0:
        return MatchResult(labels, targets, matched)
    if len(gl) != len(gt):
        raise ValueError(f"{len(gt)} boxes but {len(gl)} labels")
    if np.any(gl < 1):
        raise ValueError("ground-truth labels must be >= 1 (0 is background)")
    if image_hw is not None:
        clipped = clip_boxes(gt, image_hw)
        if not np.array_equal(clipped, gt):
            logger.warning("ground-truth box outside the image was clipped")
            gt = clipped

    ious = iou_matrix(anchors.corners(), gt)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(M), best_gt]
    matched = np.where(best_iou >= pos_threshold, best_gt, -1)
    claimed = np.zeros(M, dtype=bool)
    for j in range(len(gt)):
        col = np.where(claimed, -1.0, ious[:, j])
        a = int(np.argmax(col))
        matched[a] = j
        claimed[a] = True

    pos = matched >= 0
    labels[pos] = gl[matched[pos]]
    targets[pos] = encode_boxes(gt[matched[pos]], anchors.boxes[pos])
    return MatchResult(labels, targets, matched)


def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1, 0.5 * np.square(x), ax - 0.5)


def mine_negatives(logits: np.ndarray, labels: np.ndarray, neg_ratio: int = 3) -> np.ndarray:
    """Boolean mask of the background anchors kept for the classification sum.

    Keeps the ``neg_ratio * max(n_pos, 1)`` negatives with the highest
    background cross-entropy (ties by lowest index).
    """
    neg = labels == 0
    n_keep = min(int(neg.sum()), neg_ratio * max(int((labels > 0).sum()), 1))
    mask = np.zeros_like(neg)
    if n_keep == 0:
        return mask
    z = logits - logits.max(axis=-1, keepdims=True)
    bg_loss = np.log(np.exp(z).sum(axis=-1)) - z[:, 0]
    bg_loss = np.where(neg, bg_loss, -np.inf)
    order = np.argsort(-bg_loss, kind="stable")
    mask[order[:n_keep]] = True
    return mask


@dataclass
class LossParts:
    total: Tensor
    classification: float
    regression: float
    num_positive: int


def multitask_loss(class_logits: Tensor, box_deltas: Tensor, matches: Sequence[MatchResult], alpha: float = 0.1,
                   neg_ratio: int = 3) -> LossParts:
    """Classification log loss plus alpha-weighted smooth-L1 on positives.

    Logits are [N, M, C+1] and deltas [N, M, 4] for N images; the sum is
    normalised by the total positive count (at least 1).
    """
    if class_logits.ndim == 2:
        class_logits = ops.reshape(class_logits, (1,) + class_logits.shape)
        box_deltas = ops.reshape(box_deltas, (1,) + box_deltas.shape)
    N, M, _ = class_logits.shape
    if len(matches) != N or box_deltas.shape != (N, M, 4):
        raise ValueError(f"loss inputs do not align: logits {class_logits.shape}, deltas {box_deltas.shape}, "
                         f"{len(matches)} match results")
    labels = np.stack([m.labels for m in matches])
    targets = np.stack([m.targets for m in matches])
    if labels.shape != (N, M):
        raise ValueError(f"match results cover {labels.shape[1]} anchors, predictions {M}")
    pos = labels > 0
    keep = pos.copy()
    for i in range(N):
        keep[i] |= mine_negatives(class_logits.data[i], labels[i], neg_ratio)
    if not keep.any():
        raise ValueError("loss has neither positive nor negative anchors")
    n_pos = int(pos.sum())
    norm = 1.0 / max(n_pos, 1)
    cls = ops.softmax_cross_entropy(class_logits, labels, keep * norm)
    reg = ops.smooth_l1_loss(box_deltas, targets, pos * (alpha * norm))
    total = ops.add(cls, reg)
    return LossParts(total, float(cls.item()), float(reg.item()), n_pos)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = 0.45) -> np.ndarray:
    """Greedy suppression; returns kept indices in descending score order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.clip(np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]), 0, None)
        ih = np.clip(np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]), 0, None)
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        ov = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
        order = rest[ov <= iou_threshold]
    return np.array(keep, dtype=np.int64)


def decode_and_nms(class_probs: np.ndarray, box_deltas: np.ndarray, anchors: AnchorSet, image_hw=None,
                   score_thresh: float = 0.01, nms_iou: float = 0.45, max_out: int = 100) -> list[Detection]:
    """Per-class greedy NMS over decoded, clipped boxes; best ``max_out`` overall."""
    probs = np.asarray(class_probs, dtype=np.float64)
    boxes = decode_boxes(box_deltas, anchors.boxes)
    if image_hw is not None:
        boxes = clip_boxes(boxes, image_hw)
    found = []
    for c in range(1, probs.shape[1]):
        idx = np.nonzero(probs[:, c] > score_thresh)[0]
        if idx.size == 0:
            continue
        b = boxes[idx]
        ok = (b[:, 2] > b[:, 0]) & (b[:, 3] > b[:, 1])
        idx, b = idx[ok], b[ok]
        for k in nms(b, probs[idx, c], nms_iou):
            found.append((float(probs[idx[k], c]), c, b[k]))
    found.sort(key=lambda t: -t[0])
    return [Detection(Box(*map(float, b)), c, s) for s, c, b in found[:max_out]]
