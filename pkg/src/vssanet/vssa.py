"""Spatial sequence attention head and the plain convolutional head.

A capsule at location (x, y) of a map is the sequence of T channel vectors
ending at (x, y): (x, y-T+1) .. (x, y) for vertical capsules, (x-T+1, y) ..
(x, y) for horizontal ones.  Positions outside the map are zero vectors.  An
LSTM encodes the capsule, a second LSTM initialised from the encoder's final
state decodes it with additive attention over the encoder states, and the
prediction for the anchors at (x, y) comes from the last decode step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .autodiff import ops
from .nn import AttentionCell, Linear, LstmCell, Module, small_normal, zeros

ORIENTATIONS = ("vertical", "horizontal")
HEAD_INIT_STD = 0.01


@dataclass
class Capsule:
    features: np.ndarray          # [T, C], first row is the farthest from the anchor cell
    anchor_location: tuple[int, int]  # (x, y)
    source_map: str = ""


def capsule_at(fmap: np.ndarray, x: int, y: int, T: int, orientation: str = "vertical",
               source_map: str = "", batch_index: int = 0) -> Capsule:
    """Slice one capsule out of a [N, C, H, W] array (reference, unbatched)."""
    if T <= 0:
        raise ValueError(f"capsule size must be positive, got {T}")
    _check_orientation(orientation)
    C, H, W = fmap.shape[1:]
    feats = np.zeros((T, C), dtype=fmap.dtype)
    for t in range(T):
        back = T - 1 - t
        yy, xx = (y - back, x) if orientation == "vertical" else (y, x - back)
        if 0 <= yy < H and 0 <= xx < W:
            feats[t] = fmap[batch_index, :, yy, xx]
    return Capsule(feats, (x, y), source_map)


def _check_orientation(orientation: str) -> None:
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")


def extract_capsules(fmap: Tensor, T: int, orientation: str = "vertical") -> list[Tensor]:
    """Every capsule of the map, batched.

    Returns T tensors of shape [N*H*W, C]; element t holds V_{t+1} for all
    locations in (n, y, x) row-major order.
    """
    if T <= 0:
        raise ValueError(f"capsule size must be positive, got {T}")
    _check_orientation(orientation)
    N, C, H, W = fmap.shape
    pads = (T - 1, 0, 0, 0) if orientation == "vertical" else (0, 0, T - 1, 0)
    padded = ops.transpose(ops.pad2d(fmap, pads), (0, 2, 3, 1))  # [N, H', W', C]
    seq = []
    for t in range(T):
        if orientation == "vertical":
            window = ops.index(padded, (slice(None), slice(t, t + H)))
        else:
            window = ops.index(padded, (slice(None), slice(None), slice(t, t + W)))
        seq.append(ops.reshape(window, (N * H * W, C)))
    return seq


@dataclass
class EncoderStates:
    hidden: list[Tensor]  # h_1..h_T, each [B, H]
    cell: Tensor          # c_T


@dataclass
class DecodeResult:
    dh: Tensor            # decoder state at step T
    attended: Tensor      # attention-weighted encoder state at step T
    attention: list[Tensor]  # a^1..a^T, each [B, T]


class VssaHead(Module):
    """Encoder / attention-decoder over capsules of one pyramid level."""

    def __init__(self, in_channels: int, hidden: int, capsule: int, anchors: int, classes: int,
                 orientation: str, rng: np.random.Generator):
        _check_orientation(orientation)
        self.capsule = capsule
        self.orientation = orientation
        self.anchors, self.classes = anchors, classes
        self.encoder = LstmCell(in_channels, hidden, rng)
        self.decoder = LstmCell(hidden, hidden, rng)
        self.attention = AttentionCell(hidden, hidden, rng)
        self.head = Linear(2 * hidden, anchors * (classes + 5), rng, init_std=HEAD_INIT_STD)

    def encode(self, seq: list[Tensor]) -> EncoderStates:
        h, c = self.encoder.zero_state(seq[0].shape[0], seq[0].dtype)
        hidden = []
        for v in seq:
            h, c = self.encoder(h, c, v)
            hidden.append(h)
        return EncoderStates(hidden, c)

    def attend_decode(self, enc: EncoderStates) -> DecodeResult:
        T = len(enc.hidden)
        stacked = ops.stack(enc.hidden, axis=1)          # [B, T, H]
        projected = self.attention.project_states(stacked)
        dh, dc = enc.hidden[-1], enc.cell
        weights, attended = [], None
        for t in range(T):
            # score against the decoder state held before this step's update
            a = self.attention.weights(projected, dh)
            B = a.shape[0]
            attended = ops.reshape(ops.matmul(ops.reshape(a, (B, 1, T)), stacked), (B, -1))
            weights.append(a)
            dh, dc = self.decoder(dh, dc, enc.hidden[t])
        return DecodeResult(dh, attended, weights)

    def predict(self, dh: Tensor, attended: Tensor) -> Tensor:
        """[B, anchors * (classes + 5)] raw head output."""
        return self.head(ops.concat([dh, attended], axis=-1))

    def __call__(self, fmap: Tensor, return_attention: bool = False):
        N, _, H, W = fmap.shape
        seq = extract_capsules(fmap, self.capsule, self.orientation)
        dec = self.attend_decode(self.encode(seq))
        out = ops.reshape(self.predict(dec.dh, dec.attended), (N, H * W * self.anchors, self.classes + 5))
        if return_attention:
            return out, dec.attention
        return out


def encode_capsule(head: VssaHead, capsule: Capsule) -> EncoderStates:
    seq = [Tensor(capsule.features[t:t + 1]) for t in range(capsule.features.shape[0])]
    return head.encode(seq)


def attend_decode(head: VssaHead, enc: EncoderStates) -> DecodeResult:
    return head.attend_decode(enc)


def split_prediction(raw: Tensor, anchors: int, classes: int) -> tuple[Tensor, Tensor]:
    """Split a [..., anchors*(classes+5)] row into class logits and box deltas."""
    lead = raw.shape[:-1]
    per = ops.reshape(raw, lead + (anchors, classes + 5))
    logits, deltas = ops.split(per, [classes + 1, 4], axis=-1)
    return logits, deltas


class ConvHead(Module):
    """3x3 conv predicting anchors*(classes+5) values per location."""

    def __init__(self, in_channels: int, anchors: int, classes: int, rng: np.random.Generator):
        self.anchors, self.classes = anchors, classes
        out = anchors * (classes + 5)
        self.weight = small_normal(rng, (out, in_channels, 3, 3), HEAD_INIT_STD)
        self.bias = zeros((out,))

    def __call__(self, fmap: Tensor) -> Tensor:
        N, _, H, W = fmap.shape
        y = ops.conv2d(fmap, self.weight, self.bias, stride=1, padding="same")
        y = ops.transpose(y, (0, 2, 3, 1))
        return ops.reshape(y, (N, H * W * self.anchors, self.classes + 5))


def make_level_head(kind: Optional[str], in_channels: int, hidden: int, capsule: int, anchors: int,
                    classes: int, rng: np.random.Generator) -> Module:
    if kind in (None, "none"):
        return ConvHead(in_channels, anchors, classes, rng)
    return VssaHead(in_channels, hidden, capsule, anchors, classes, kind, rng)
