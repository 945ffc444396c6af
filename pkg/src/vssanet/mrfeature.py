"""MobileNet-style backbone and the densely connected deconvolution fusion.

The backbone reaches stride 64 with six stride-2 stages (Conv1, DC2, DC4, DC6,
DC12, DC13).  Skips are chosen by resolution: the stride-32 stage joins the
first fusion, the stride-16 stage the second.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .autodiff import ops
from .nn import ConvBlock, Deconv, Module, SeparableBlock, channels, full, he_uniform, zeros

MIN_INPUT = 64
L2_SCALE_INIT = 20.0

# (name, output channels, stride) after Conv1
SEPARABLE_LAYERS = (
    ("dc1", 64, 1),
    ("dc2", 128, 2),
    ("dc3", 128, 1),
    ("dc4", 256, 2),
    ("dc5", 256, 1),
    ("dc6", 512, 2),
    ("dc7", 512, 1),
    ("dc8", 512, 1),
    ("dc9", 512, 1),
    ("dc10", 512, 1),
    ("dc11", 512, 1),
    ("dc12", 1024, 2),
    ("dc13", 1024, 2),
)
STAGE_TAPS = {"dc5": "s8", "dc11": "s16", "dc12": "s32", "dc13": "s64"}


@dataclass
class BackboneStages:
    s8: Tensor
    s16: Tensor
    s32: Tensor
    s64: Tensor


@dataclass
class FeaturePyramid:
    p5: Tensor   # stride 64, raw DC13 output
    p10: Tensor  # stride 32, first fusion
    p19: Tensor  # stride 16, second fusion

    def levels(self) -> list[Tensor]:
        """Maps ordered fine to coarse, the anchor ordering."""
        return [self.p19, self.p10, self.p5]

    def sizes(self) -> list[tuple[int, int]]:
        return [t.shape[2:] for t in self.levels()]


def pyramid_sizes(size: int) -> list[tuple[int, int]]:
    """Fine-to-coarse map sizes for a square input, by ceil division."""
    return [(-(-size // s), -(-size // s)) for s in (16, 32, 64)]


class Backbone(Module):
    def __init__(self, width: float, rng: np.random.Generator, scale_init: float = 1.0):
        self.width = width
        self.conv1 = ConvBlock(3, channels(32, width), 2, rng, scale_init=scale_init)
        cin = channels(32, width)
        self.blocks = []
        for _, base, stride in SEPARABLE_LAYERS:
            cout = channels(base, width)
            self.blocks.append(SeparableBlock(cin, cout, stride, rng, scale_init=scale_init))
            cin = cout

    def stage_channels(self) -> dict[str, int]:
        return {STAGE_TAPS[name]: channels(base, self.width)
                for name, base, _ in SEPARABLE_LAYERS if name in STAGE_TAPS}

    def __call__(self, image: Tensor) -> BackboneStages:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"backbone expects [N, 3, S, S] input, got {image.shape}")
        if min(image.shape[2:]) < MIN_INPUT:
            raise ValueError(f"input {image.shape[2]}x{image.shape[3]} is too small for a stride-64 "
                             f"backbone (minimum {MIN_INPUT})")
        x = self.conv1(image)
        taps = {}
        for (name, _, _), block in zip(SEPARABLE_LAYERS, self.blocks):
            x = block(x)
            if name in STAGE_TAPS:
                taps[STAGE_TAPS[name]] = x
        return BackboneStages(**taps)


def backbone_forward(backbone: Backbone, image: Tensor) -> BackboneStages:
    return backbone(image)


class Fusion(Module):
    """Concat -> per-location L2 normalize (learnable scale) -> 1x1 projection -> ReLU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.norm_scale = full((cin,), L2_SCALE_INIT)
        self.proj = he_uniform(rng, (cout, cin, 1, 1), cin)
        self.bias = zeros((cout,))

    def __call__(self, parts: list[Tensor]) -> Tensor:
        cat = ops.concat(parts, axis=1)
        if cat.shape[1] != self.norm_scale.shape[0]:
            raise ValueError(f"fusion expects {self.norm_scale.shape[0]} concatenated channels, got {cat.shape}")
        y = ops.l2_normalize(cat, self.norm_scale, axis=1)
        return ops.relu(ops.conv2d(y, self.proj, self.bias, stride=1))


class MRFeature(Module):
    """Backbone plus the two deconvolution fusions, yielding a 3-level pyramid."""

    def __init__(self, width: float, rng: np.random.Generator, scale_init: float = 1.0):
        self.width = width
        self.backbone = Backbone(width, rng, scale_init=scale_init)
        ch = self.backbone.stage_channels()
        c512, c256 = channels(512, width), channels(256, width)
        self.up1 = Deconv(ch["s64"], c512, rng)        # s64 -> s32 resolution, first fusion
        self.fuse1 = Fusion(ch["s32"] + c512, c512, rng)
        self.up2 = Deconv(c512, c256, rng)              # dcd1 -> s16 resolution
        self.up64a = Deconv(ch["s64"], c256, rng)       # chained s64 -> s32 -> s16
        self.up64b = Deconv(c256, c256, rng)
        self.fuse2 = Fusion(ch["s16"] + 2 * c256, c512, rng)

    def out_channels(self) -> dict[str, int]:
        c512 = channels(512, self.width)
        return {"p5": self.backbone.stage_channels()["s64"], "p10": c512, "p19": c512}

    def build_dcd1(self, stages: BackboneStages) -> Tensor:
        up = self.up1(stages.s64, stages.s32.shape[2:])
        if up.shape[2:] != stages.s32.shape[2:]:
            raise RuntimeError(f"deconv produced {up.shape[2:]}, expected {stages.s32.shape[2:]}")
        return self.fuse1([stages.s32, up])

    def build_dcd2(self, stages: BackboneStages, dcd1: Tensor) -> Tensor:
        target = stages.s16.shape[2:]
        from_dcd1 = self.up2(dcd1, target)
        from_s64 = self.up64b(self.up64a(stages.s64, stages.s32.shape[2:]), target)
        return self.fuse2([stages.s16, from_dcd1, from_s64])

    def __call__(self, image: Tensor) -> FeaturePyramid:
        stages = self.backbone(image)
        dcd1 = self.build_dcd1(stages)
        dcd2 = self.build_dcd2(stages, dcd1)
        return FeaturePyramid(p5=stages.s64, p10=dcd1, p19=dcd2)


def build_dcd1(model: MRFeature, stages: BackboneStages) -> Tensor:
    return model.build_dcd1(stages)


def build_dcd2(model: MRFeature, stages: BackboneStages, dcd1: Tensor) -> Tensor:
    return model.build_dcd2(stages, dcd1)
