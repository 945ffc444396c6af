"""Small driver functions for desk-scale training runs and their measurements."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .config import TrainConfig
from .dataset import Sample, SceneSpec, boxes_and_labels, derive_seeds, generate_scene
from .detection import decode_boxes, iou_matrix, match
from .evaluator import EvalReport, evaluate
from .model import Detector, cached_anchors, detect, image_to_tensor, resize_nearest, softmax_np
from .trainer import TrainItem, TrainResult, train


def make_samples(spec: SceneSpec, n: int, master_seed: int) -> list[Sample]:
    return [generate_scene(spec, seed=s) for s in derive_seeds(master_seed, n)]


def to_items(samples: Sequence[Sample]) -> list[TrainItem]:
    return [TrainItem(s.image, *boxes_and_labels(s.objects)) for s in samples]


def fit(cfg: TrainConfig, samples: Sequence[Sample]) -> tuple[Detector, TrainResult]:
    model = Detector(cfg)
    return model, train(model, to_items(samples), cfg)


def eval_map(model: Detector, samples: Sequence[Sample], cfg: TrainConfig, score_thresh: float = 0.01,
             iou_threshold: float = 0.5) -> EvalReport:
    dets = [detect(model, s.image, cfg.base_size, score_thresh=score_thresh) for s in samples]
    return evaluate(dets, [s.objects for s in samples], cfg.num_classes, iou_threshold=iou_threshold)


def localization_iou(model: Detector, samples: Sequence[Sample], cfg: TrainConfig) -> float:
    """Mean IoU between each ground truth box and the regressed box of its best matched anchor.

    For every ground truth, among the anchors the matcher assigns to it, the
    one with the highest probability for the true class is decoded and
    compared with the box.  Classification quality only picks the anchor;
    the number measures the box regression.
    """
    size = cfg.base_size
    dtype = model.features.backbone.conv1.weight.dtype.type
    ious = []
    for s in samples:
        boxes, labels = boxes_and_labels(s.objects)
        if not len(labels):
            continue
        h, w = s.image.shape[:2]
        boxes = boxes * np.array([size / w, size / h, size / w, size / h])
        with no_grad():
            out = model(image_to_tensor(resize_nearest(s.image, size), dtype=dtype))
        anchors = cached_anchors(model, out.sizes, size)
        m = match(anchors, boxes, labels)
        probs = softmax_np(out.logits.data[0].astype(np.float64))
        decoded = decode_boxes(out.deltas.data[0].astype(np.float64), anchors.boxes)
        for j in range(len(labels)):
            cand = np.nonzero(m.matched_gt == j)[0]
            best = cand[int(np.argmax(probs[cand, labels[j]]))]
            ious.append(float(iou_matrix(decoded[best][None], boxes[j][None])[0, 0]))
    return float(np.mean(ious)) if ious else 0.0


@dataclass
class RunSummary:
    orientation: str
    seed: int
    mAP: float
    final_loss: float
    seconds: float


def ablation_run(cfg: TrainConfig, train_samples: Sequence[Sample], test_samples: Sequence[Sample],
                 score_thresh: float = 0.01) -> RunSummary:
    model, result = fit(cfg, train_samples)
    report = eval_map(model, test_samples, cfg, score_thresh=score_thresh)
    return RunSummary(cfg.orientation, cfg.seed, report.mAP, float(np.mean(result.losses[-20:])), result.seconds)


def median(values: Sequence[float]) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def pole_spec(seed: int = 0, image_size: int = 300, distractors: tuple = (2, 3),
              num_classes: int = 3) -> SceneSpec:
    return SceneSpec(image_size=image_size, pole_rate=1.0, distractor_count=distractors, num_classes=num_classes,
                     seed=seed)


def summarize(runs: Sequence[RunSummary]) -> dict[str, float]:
    by: dict[str, list[float]] = {}
    for r in runs:
        by.setdefault(r.orientation, []).append(r.mAP)
    return {k: median(v) for k, v in by.items()}

