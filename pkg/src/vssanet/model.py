"""The full single-shot detector: MRFeature pyramid plus per-level heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import ops
from .config import TrainConfig
from .detection import ASPECT_RATIOS, AnchorSet, Box, Detection, decode_and_nms, generate_anchors
from .mrfeature import FeaturePyramid, MRFeature
from .nn import Module
from .vssa import ConvHead, VssaHead

NUM_ANCHORS = len(ASPECT_RATIOS)


@dataclass
class DetectorOutput:
    logits: Tensor                 # [N, M, C+1]
    deltas: Tensor                 # [N, M, 4]
    sizes: list[tuple[int, int]]   # fine-to-coarse map sizes
    pyramid: Optional[FeaturePyramid] = None


class Detector(Module):
    def __init__(self, cfg: TrainConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.num_classes = cfg.num_classes
        self.orientation = cfg.orientation
        self.anchor_scales = (cfg.anchor_min_scale, cfg.anchor_max_scale)
        self.features = MRFeature(cfg.width, rng)
        ch = self.features.out_channels()
        A, C = NUM_ANCHORS, cfg.num_classes
        self.head_p19 = ConvHead(ch["p19"], A, C, rng)
        if cfg.orientation == "none":
            self.head_p10 = ConvHead(ch["p10"], A, C, rng)
            self.head_p5 = ConvHead(ch["p5"], A, C, rng)
        else:
            self.vssa_p10 = VssaHead(ch["p10"], cfg.hidden, cfg.capsule_p10, A, C, cfg.orientation, rng)
            self.vssa_p5 = VssaHead(ch["p5"], cfg.hidden, cfg.capsule_p5, A, C, cfg.orientation, rng)

    def level_heads(self) -> list[Module]:
        if self.orientation == "none":
            return [self.head_p19, self.head_p10, self.head_p5]
        return [self.head_p19, self.vssa_p10, self.vssa_p5]

    def __call__(self, images: Tensor, keep_pyramid: bool = False) -> DetectorOutput:
        pyr = self.features(images)
        outs = [head(fmap) for head, fmap in zip(self.level_heads(), pyr.levels())]
        allout = ops.concat(outs, axis=1)
        logits, deltas = ops.split(allout, [self.num_classes + 1, 4], axis=-1)
        return DetectorOutput(logits, deltas, pyr.sizes(), pyr if keep_pyramid else None)

    def anchors_for(self, sizes, input_hw) -> AnchorSet:
        return generate_anchors(sizes, input_hw, min_scale=self.anchor_scales[0], max_scale=self.anchor_scales[1])


_anchor_cache: dict = {}


def cached_anchors(model: Detector, sizes, input_hw) -> AnchorSet:
    key = (tuple(map(tuple, sizes)), tuple(np.atleast_1d(input_hw)), model.anchor_scales)
    if key not in _anchor_cache:
        _anchor_cache[key] = model.anchors_for(sizes, input_hw)
    return _anchor_cache[key]


def image_to_tensor(images: np.ndarray, dtype=np.float32) -> Tensor:
    """uint8 [N, H, W, 3] (or a single [H, W, 3]) to a [-1, 1] NCHW tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    x = (arr.astype(dtype) - dtype(127.5)) / dtype(127.5)
    return Tensor(np.ascontiguousarray(x.transpose(0, 3, 1, 2)), dtype=dtype)


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    rows = np.minimum((np.arange(size) + 0.5) * h / size, h - 1).astype(np.intp)
    cols = np.minimum((np.arange(size) + 0.5) * w / size, w - 1).astype(np.intp)
    return image[rows][:, cols]


def softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def detect(model: Detector, image: np.ndarray, input_size: int = 300, score_thresh: float = 0.01,
           nms_iou: float = 0.45, max_out: int = 100) -> list[Detection]:
    """Detections for one uint8 image, in that image's pixel coordinates."""
    h, w = image.shape[:2]
    x = image_to_tensor(resize_nearest(image, input_size), dtype=model.features.backbone.conv1.weight.dtype.type)
    with no_grad():
        out = model(x)
    anchors = cached_anchors(model, out.sizes, input_size)
    probs = softmax_np(out.logits.data[0].astype(np.float64))
    dets = decode_and_nms(probs, out.deltas.data[0], anchors, (input_size, input_size),
                          score_thresh=score_thresh, nms_iou=nms_iou, max_out=max_out)
    sx, sy = w / input_size, h / input_size
    rescaled = []
    for d in dets:
        b = d.box
        try:
            box = Box(b.xmin * sx, b.ymin * sy, b.xmax * sx, b.ymax * sy)
        except ValueError:
            continue
        rescaled.append(Detection(box, d.class_id, d.score))
    return rescaled
