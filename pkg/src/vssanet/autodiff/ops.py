"""Differentiable operations on :class:`Tensor`.

Elementwise binary ops are strict: operand shapes must match exactly.  Use
:func:`broadcast_to` when a broadcast is intended, so the reduction in the
backward pass is always explicit.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, check_finite, current_tape, grad_enabled, is_debug

Padding = Union[str, int]


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if is_debug():
        check_finite(op, out.data)
    if needs:
        current_tape().record(op, inputs, out, backward_fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (broadcasting is not implicit)")


def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for a {ndim}-d tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result("scale", a.data * a.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape)
    lead = len(shape) - a.ndim
    src = a.shape

    def backward(g):
        red = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and red.shape[i] != 1)
        if axes:
            red = red.sum(axis=axes, keepdims=True)
        return (red,)

    return _result("broadcast_to", np.array(out), (a,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _result("tanh", t, (x,), lambda g: (g * (1 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _result("exp", e, (x,), lambda g: (g * e,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result("softmax", p, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result("log_softmax", out, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/int) or integer-array indexing."""
    src_shape, dtype = x.shape, x.dtype
    fancy = any(isinstance(k, (list, np.ndarray)) for k in (key if isinstance(key, tuple) else (key,)))

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        if fancy:
            np.add.at(full, key, g)
        else:
            full[key] += g
        return (full,)

    return _result("index", np.array(x.data[key]), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    axis = _axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    axis = _axis(axis, x.ndim)
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to {x.shape[axis]}")
    parts, lo = [], 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(lo, lo + n)
        parts.append(index(x, tuple(sl)))
        lo += n
    return parts


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    axis = _axis(axis, tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def pad2d(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad the last two axes by (top, bottom, left, right)."""
    top, bottom, left, right = pads
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    H, W = x.shape[-2:]

    def backward(g):
        return (g[..., top:top + H, left:left + W],)

    return _result("pad2d", np.pad(x.data, width), (x,), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result("sum", np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for a of shape [..., m, k] and b of shape [k, n] or [..., k, n]."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ValueError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    shared_b = b.ndim == 2 and a.ndim > 2

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared_b:
            gb = np.tensordot(ad.reshape(-1, ad.shape[-1]), g.reshape(-1, g.shape[-1]), axes=(0, 0))
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias shape {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _result("linear", out, inputs, backward)


# ---------------------------------------------------------------------------
# convolution family (NCHW)
# ---------------------------------------------------------------------------

def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) padding for ceil-mode 'same' convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _resolve_padding(H: int, W: int, k: int, stride: int, padding: Padding):
    if padding == "same":
        Ho, pt, pb = same_padding(H, k, stride)
        Wo, pl, pr = same_padding(W, k, stride)
    elif padding == "valid" or isinstance(padding, int):
        p = 0 if padding == "valid" else int(padding)
        pt = pb = pl = pr = p
        Ho = (H + 2 * p - k) // stride + 1
        Wo = (W + 2 * p - k) // stride + 1
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if Ho < 1 or Wo < 1:
        raise ValueError(f"input {H}x{W} too small for kernel {k} with padding {padding!r}")
    return Ho, Wo, (pt, pb, pl, pr)


def _im2col(xp: np.ndarray, k: int, s: int, Ho: int, Wo: int) -> np.ndarray:
    N, C = xp.shape[:2]
    cols = np.empty((N, C, k, k, Ho, Wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
    return cols.reshape(N, C * k * k, Ho * Wo)


def _col2im(cols: np.ndarray, shape: tuple, k: int, s: int, Ho: int, Wo: int) -> np.ndarray:
    N, C = shape[:2]
    cols = cols.reshape(N, C, k, k, Ho, Wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: Padding = "same") -> Tensor:
    """Dense 2-d convolution (cross-correlation). weight is [F, C, k, k]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    N, C, H, W = x.shape
    F, Cw, k, k2 = weight.shape
    if Cw != C:
        raise ValueError(f"conv2d: input has {C} channels but weight expects {Cw} (weight {weight.shape})")
    if k != k2 or k < 1 or stride < 1:
        raise ValueError(f"conv2d: need a square kernel >= 1 and stride >= 1, got {weight.shape}, stride {stride}")
    if bias is not None and bias.shape != (F,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {F} filters")
    xd, wd = x.data, weight.data

    if k == 1 and stride == 1 and padding in ("same", "valid", 0):
        flat = xd.reshape(N, C, H * W)
        w2 = wd.reshape(F, C)
        out = w2 @ flat
        if bias is not None:
            out += bias.data[:, None]

        def backward(g):
            g3 = g.reshape(N, F, H * W)
            gx = (w2.T @ g3).reshape(N, C, H, W)
            gw = np.tensordot(g3, flat, axes=([0, 2], [0, 2])).reshape(F, C, 1, 1)
            rest = (g3.sum(axis=(0, 2)),) if bias is not None else ()
            return (gx, gw) + rest

        inputs = (x, weight) + ((bias,) if bias is not None else ())
        return _result("conv2d", out.reshape(N, F, H, W), inputs, backward)

    Ho, Wo, (pt, pb, pl, pr) = _resolve_padding(H, W, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else xd
    cols = _im2col(xp, k, stride, Ho, Wo)
    w2 = wd.reshape(F, C * k * k)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]

    def backward(g):
        g3 = g.reshape(N, F, Ho * Wo)
        gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        gxp = _col2im(w2.T @ g3, xp.shape, k, stride, Ho, Wo)
        gx = gxp[:, :, pt:pt + H, pl:pl + W]
        rest = (g3.sum(axis=(0, 2)),) if bias is not None else ()
        return (gx, gw) + rest

    inputs = (x, weight) + ((bias,) if bias is not None else ())
    return _result("conv2d", out.reshape(N, F, Ho, Wo), inputs, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: Padding = "same") -> Tensor:
    """One k x k filter per channel. weight is [C, 1, k, k]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"depthwise_conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    N, C, H, W = x.shape
    if weight.shape[0] != C or weight.shape[1] != 1:
        raise ValueError(f"depthwise_conv2d: weight {weight.shape} must be [{C}, 1, k, k] for {C} input channels")
    k = weight.shape[2]
    Ho, Wo, (pt, pb, pl, pr) = _resolve_padding(H, W, k, stride, padding)
    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else xd
    s = stride
    out = np.zeros((N, C, Ho, Wo), dtype=xd.dtype)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] * wd[None, :, 0, i, j, None, None]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(k):
            for j in range(k):
                win = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, win)
                gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += g * wd[None, :, 0, i, j, None, None]
        return gxp[:, :, pt:pt + H, pl:pl + W], gw

    return _result("depthwise_conv2d", out, (x, weight), backward)


def transposed_output_padding(size: int, target: int, k: int = 3, stride: int = 2, pad: int = 1) -> int:
    """Output padding that makes a transposed conv land exactly on ``target``."""
    base = (size - 1) * stride + k - 2 * pad
    outpad = target - base
    if not 0 <= outpad < max(stride, 1) or outpad > pad:
        reachable = sorted({base + p for p in range(0, min(stride - 1, pad) + 1)})
        raise ValueError(f"transposed conv cannot map {size} to {target} "
                         f"(k={k}, stride={stride}, pad={pad}); achievable sizes: {reachable}")
    return outpad


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2,
                     target_hw: Optional[tuple[int, int]] = None, pad: int = 1) -> Tensor:
    """Transposed convolution; the adjoint of ``conv2d(..., stride, padding=pad)``.

    weight is [C_in, F, k, k].  ``target_hw`` picks the output padding; it must be
    reachable as ``(H - 1) * stride + k - 2 * pad + outpad`` with
    ``0 <= outpad <= min(stride - 1, pad)``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    N, C, H, W = x.shape
    Cw, F, k, _ = weight.shape
    if Cw != C:
        raise ValueError(f"conv_transpose2d: input has {C} channels but weight expects {Cw}")
    if target_hw is None:
        target_hw = ((H - 1) * stride + k - 2 * pad, (W - 1) * stride + k - 2 * pad)
    Ht, Wt = target_hw
    transposed_output_padding(H, Ht, k, stride, pad)
    transposed_output_padding(W, Wt, k, stride, pad)
    xd, wd = x.data, weight.data
    flat = xd.reshape(N, C, H * W)
    w2 = wd.reshape(C, F * k * k)
    full_shape = (N, F, (H - 1) * stride + k, (W - 1) * stride + k)
    full = _col2im(w2.T @ flat, full_shape, k, stride, H, W)
    out = np.ascontiguousarray(full[:, :, pad:pad + Ht, pad:pad + Wt])
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gfull = np.zeros(full_shape, dtype=g.dtype)
        gfull[:, :, pad:pad + Ht, pad:pad + Wt] = g
        gcols = _im2col(gfull, k, stride, H, W)
        gx = (w2 @ gcols).reshape(N, C, H, W)
        gw = np.tensordot(flat, gcols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        rest = (g.sum(axis=(0, 2, 3)),) if bias is not None else ()
        return (gx, gw) + rest

    inputs = (x, weight) + ((bias,) if bias is not None else ())
    return _result("conv_transpose2d", out, inputs, backward)


def scale_shift(x: Tensor, scale_: Tensor, shift: Tensor, axis: int = 1) -> Tensor:
    """Per-channel affine ``x * scale[c] + shift[c]`` along ``axis``."""
    axis = _axis(axis, x.ndim)
    C = x.shape[axis]
    if scale_.shape != (C,) or shift.shape != (C,):
        raise ValueError(f"scale_shift: expected ({C},) parameters, got {scale_.shape} and {shift.shape}")
    view = [1] * x.ndim
    view[axis] = C
    s = scale_.data.reshape(view)
    red = tuple(i for i in range(x.ndim) if i != axis)
    xd = x.data

    def backward(g):
        return g * s, (g * xd).sum(axis=red), g.sum(axis=red)

    return _result("scale_shift", xd * s + shift.data.reshape(view), (x, scale_, shift), backward)


def l2_normalize(x: Tensor, scale_: Optional[Tensor] = None, axis: int = 1, eps: float = 1e-12) -> Tensor:
    """Unit L2 norm along ``axis`` at every other position, then per-channel scaling.

    The norm is floored at ``eps`` so all-zero vectors stay zero; above the
    floor the result has unit norm exactly up to rounding.
    """
    axis = _axis(axis, x.ndim)
    xd = x.data
    raw = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    clamped = raw < eps
    norm = np.maximum(raw, eps)
    u = xd / norm

    def project(gu):
        # below the floor the map is linear, x / eps
        return np.where(clamped, gu, gu - u * (gu * u).sum(axis=axis, keepdims=True)) / norm

    if scale_ is None:
        def backward(g):
            return (project(g),)
        return _result("l2_normalize", u, (x,), backward)

    C = x.shape[axis]
    if scale_.shape != (C,):
        raise ValueError(f"l2_normalize: scale shape {scale_.shape} must be ({C},)")
    view = [1] * x.ndim
    view[axis] = C
    s = scale_.data.reshape(view)
    red = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        return project(g * s), (g * u).sum(axis=red)

    return _result("l2_normalize", u * s, (x, scale_), backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Scalar ``sum_i w_i * -log softmax(logits_i)[labels_i]`` over all leading positions."""
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=logits.dtype)
    if labels.shape != logits.shape[:-1] or weights.shape != labels.shape:
        raise ValueError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}, "
                         f"weights {weights.shape} do not align")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    loss = -(weights * picked).sum()

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, labels[..., None].astype(np.intp),
                          np.take_along_axis(grad, labels[..., None].astype(np.intp), axis=-1) - 1, axis=-1)
        return (grad * (weights[..., None] * g),)

    return _result("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def smooth_l1_loss(pred: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """Scalar weighted smooth-L1 of ``pred - target``.

    ``weights`` has either pred's full shape or pred's shape without the last axis.
    """
    target = np.asarray(target, dtype=pred.dtype)
    weights = np.asarray(weights, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ValueError(f"smooth_l1_loss: target {target.shape} does not match prediction {pred.shape}")
    if weights.shape == pred.shape[:-1]:
        weights = weights[..., None]
    elif weights.shape != pred.shape:
        raise ValueError(f"smooth_l1_loss: weights {weights.shape} do not align with {pred.shape}")
    d = pred.data - target
    ad = np.abs(d)
    per = np.where(ad < 1, 0.5 * d * d, ad - 0.5)
    loss = (weights * per).sum()

    def backward(g):
        return (np.clip(d, -1, 1) * weights * g,)

    return _result("smooth_l1_loss", np.asarray(loss, dtype=pred.dtype), (pred,), backward)


def smooth_l1(x: float) -> float:
    """Plain scalar smooth-L1: 0.5 x^2 below |x| = 1, |x| - 0.5 above."""
    ax = abs(x)
    return 0.5 * x * x if ax < 1 else ax - 0.5


__all__ = [
    "add", "sub", "mul", "scale", "broadcast_to", "relu", "sigmoid", "tanh", "exp", "softmax",
    "log_softmax", "reshape", "transpose", "index", "concat", "split", "stack", "pad2d", "sum", "mean",
    "matmul", "linear", "conv2d", "depthwise_conv2d", "conv_transpose2d", "scale_shift", "l2_normalize",
    "softmax_cross_entropy", "smooth_l1_loss", "smooth_l1", "same_padding", "transposed_output_padding",
    "as_tensor",
]
