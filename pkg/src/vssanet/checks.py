"""Named finite-difference checks for every differentiable op and block.

Each entry builds its inputs (and any module) in 64-bit from a fixed seed and
returns a ``GradCheckReport``.  The ``gradcheck`` command and the test suite
both run this registry.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import GradCheckReport, Tensor, default_dtype, grad_check
from .autodiff import ops
from .detection import MatchResult, multitask_loss
from .mrfeature import Fusion
from .nn import AttentionCell, Deconv, LstmCell, SeparableBlock
from .vssa import ConvHead, VssaHead

TOLERANCE = 1e-4


def _t(rng: np.random.Generator, shape, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> Tensor:
    """Uniform values with |x| >= margin so kinks stay out of the stencil."""
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, dtype=np.float64)


def _module_check(build: Callable, run: Callable, inputs, seed: int) -> GradCheckReport:
    with default_dtype(np.float64):
        mod = build(np.random.default_rng(seed))
    return grad_check(lambda *xs: run(mod, *xs), inputs, TOLERANCE, wrt=mod.parameters(), seed=seed)


def _check_lstm(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return _module_check(lambda r: LstmCell(5, 4, r), lambda m, h, c, x: ops.concat(list(m(h, c, x)), axis=1),
                         [_t(rng, (3, 4)), _t(rng, (3, 4)), _t(rng, (3, 5))], seed)


def _check_attention(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)

    def run(m, enc, d):
        return m.weights(m.project_states(enc), d)

    return _module_check(lambda r: AttentionCell(4, 3, r), run, [_t(rng, (2, 3, 4)), _t(rng, (2, 4))], seed)


def _check_vssa(seed: int, orientation: str = "vertical") -> GradCheckReport:
    rng = np.random.default_rng(seed)
    # T=3, hidden 8: the head configuration used on the coarsest level
    return _module_check(lambda r: VssaHead(4, 8, 3, 2, 2, orientation, r), lambda m, f: m(f),
                         [_t(rng, (1, 4, 3, 2))], seed)


def _check_separable(seed: int, stride: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return _module_check(lambda r: SeparableBlock(3, 4, stride, r), lambda m, x: m(x),
                         [_away_from_zero(rng, (1, 3, 5, 5))], seed)


def _check_deconv(seed: int, target) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return _module_check(lambda r: Deconv(3, 2, r), lambda m, x: m(x, target), [_t(rng, (1, 3, 3, 3))], seed)


def _check_fusion(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return _module_check(lambda r: Fusion(5, 3, r), lambda m, a, b: m([a, b]),
                         [_t(rng, (1, 2, 3, 3)), _t(rng, (1, 3, 3, 3))], seed)


def _check_conv_head(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return _module_check(lambda r: ConvHead(3, 2, 2, r), lambda m, f: m(f), [_t(rng, (1, 3, 3, 3))], seed)


def _check_detection_loss(seed: int, alpha: float = 0.1) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    N, M, C = 2, 12, 3
    labels = rng.integers(0, C + 1, size=(N, M))
    labels[:, 0] = 1
    targets = rng.normal(0, 1.5, size=(N, M, 4)) * (labels[..., None] > 0)
    matches = [MatchResult(labels[i], targets[i], np.where(labels[i] > 0, 0, -1)) for i in range(N)]
    # mining depends on logits only through ranking, which the stencil never flips here
    logits = _t(rng, (N, M, C + 1), -2, 2)
    deltas = Tensor(targets + _away_from_zero(rng, (N, M, 4), 0.05).data * 2, dtype=np.float64)

    def fn(lg, dl):
        return multitask_loss(lg, dl, matches, alpha=alpha, neg_ratio=3).total

    return grad_check(fn, [logits, deltas], TOLERANCE, seed=seed)


def _ce(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=(2, 5))
    w = rng.uniform(0, 1, size=(2, 5))
    return grad_check(lambda x: ops.softmax_cross_entropy(x, labels, w), [(2, 5, 4)], TOLERANCE, seed=seed)


def _sl1(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    target = rng.uniform(-2, 2, size=(3, 4))
    pred = Tensor(target + _away_from_zero(rng, (3, 4), 0.05).data * 2, dtype=np.float64)
    w = rng.uniform(0, 1, size=(3,))
    return grad_check(lambda p: ops.smooth_l1_loss(p, target, w), [pred], TOLERANCE, seed=seed)


def _binary(op) -> Callable[[int], GradCheckReport]:
    return lambda seed: grad_check(op, [(2, 3), (2, 3)], TOLERANCE, seed=seed)


def _unary(op, shape=(2, 3, 4), positive_margin: bool = False) -> Callable[[int], GradCheckReport]:
    def run(seed: int) -> GradCheckReport:
        rng = np.random.default_rng(seed)
        x = _away_from_zero(rng, shape) if positive_margin else _t(rng, shape)
        return grad_check(op, [x], TOLERANCE, seed=seed)
    return run


def _shapes(op, *shapes) -> Callable[[int], GradCheckReport]:
    return lambda seed: grad_check(op, list(shapes), TOLERANCE, seed=seed)


CHECKS: dict[str, Callable[[int], GradCheckReport]] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "scale": _unary(lambda x: ops.scale(x, -2.5)),
    "broadcast_to": _shapes(lambda x: ops.broadcast_to(x, (3, 2, 4)), (1, 2, 1)),
    "relu": _unary(ops.relu, positive_margin=True),
    "sigmoid": _unary(ops.sigmoid),
    "tanh": _unary(ops.tanh),
    "exp": _unary(ops.exp),
    "softmax": _unary(lambda x: ops.softmax(x, axis=1)),
    "log_softmax": _unary(lambda x: ops.log_softmax(x, axis=-1)),
    "reshape": _unary(lambda x: ops.reshape(x, (4, 6))),
    "transpose": _unary(lambda x: ops.transpose(x, (2, 0, 1))),
    "index": _unary(lambda x: ops.index(x, (slice(None), [2, 0, 2], slice(1, 3)))),
    "concat": _shapes(lambda a, b: ops.concat([a, b], axis=1), (2, 2, 3), (2, 1, 3)),
    "split": _unary(lambda x: ops.mul(*ops.split(x, [2, 2], axis=2))),
    "stack": _shapes(lambda a, b: ops.stack([a, b], axis=1), (2, 3), (2, 3)),
    "pad2d": _shapes(lambda x: ops.pad2d(x, (2, 0, 1, 1)), (1, 2, 3, 3)),
    "sum": _unary(lambda x: ops.sum(x, axis=1)),
    "mean": _unary(lambda x: ops.mean(x, axis=(0, 2), keepdims=True)),
    "matmul": _shapes(ops.matmul, (2, 3, 4), (4, 5)),
    "matmul_batched": _shapes(ops.matmul, (2, 3, 4), (2, 4, 2)),
    "linear": _shapes(ops.linear, (3, 4), (5, 4), (5,)),
    "conv2d": _shapes(lambda x, w, b: ops.conv2d(x, w, b, stride=1), (2, 3, 5, 5), (4, 3, 3, 3), (4,)),
    "conv2d_stride2": _shapes(lambda x, w: ops.conv2d(x, w, None, stride=2), (1, 2, 6, 5), (3, 2, 3, 3)),
    "conv2d_valid": _shapes(lambda x, w: ops.conv2d(x, w, None, stride=1, padding="valid"), (1, 2, 5, 5), (2, 2, 3, 3)),
    "conv2d_1x1": _shapes(lambda x, w, b: ops.conv2d(x, w, b), (2, 3, 4, 4), (5, 3, 1, 1), (5,)),
    "depthwise_conv2d": _shapes(lambda x, w: ops.depthwise_conv2d(x, w, stride=1), (2, 3, 5, 5), (3, 1, 3, 3)),
    "depthwise_conv2d_stride2": _shapes(lambda x, w: ops.depthwise_conv2d(x, w, stride=2), (1, 2, 7, 6), (2, 1, 3, 3)),
    "conv_transpose2d": _shapes(lambda x, w, b: ops.conv_transpose2d(x, w, b, stride=2, target_hw=(6, 5)),
                                (1, 3, 3, 3), (3, 2, 3, 3), (2,)),
    "scale_shift": _shapes(ops.scale_shift, (2, 3, 2, 2), (3,), (3,)),
    "l2_normalize": _shapes(lambda x, s: ops.l2_normalize(x, s, axis=1), (2, 4, 2, 2), (4,)),
    "softmax_cross_entropy": _ce,
    "smooth_l1_loss": _sl1,
    "separable_block": lambda seed: _check_separable(seed, 1),
    "separable_block_stride2": lambda seed: _check_separable(seed, 2),
    "deconv": lambda seed: _check_deconv(seed, (6, 6)),
    "deconv_odd": lambda seed: _check_deconv(seed, (5, 5)),
    "fusion": _check_fusion,
    "lstm_cell": _check_lstm,
    "attention_cell": _check_attention,
    "vssa_head": _check_vssa,
    "vssa_head_horizontal": lambda seed: _check_vssa(seed, "horizontal"),
    "conv_head": _check_conv_head,
    "detection_loss": _check_detection_loss,
    "detection_loss_alpha0": lambda seed: _check_detection_loss(seed, 0.0),
}


def run_check(name: str, seed: int = 0) -> GradCheckReport:
    if name not in CHECKS:
        raise KeyError(f"unknown gradient check {name!r}; known: {', '.join(sorted(CHECKS))}")
    return CHECKS[name](seed)


def run_all(seed: int = 0) -> dict[str, GradCheckReport]:
    return {name: fn(seed) for name, fn in CHECKS.items()}
