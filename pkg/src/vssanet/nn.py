"""Parameter containers and the composite layers the detector is built from."""

from __future__ import annotations

import math
from typing import Iterator, Optional, Sequence

import numpy as np

from .autodiff import Tensor, get_default_dtype
from .autodiff import ops

# LSTM gate layout along the 4H axis
GATE_ORDER = ("input", "forget", "cell", "output")


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=tuple(shape)), requires_grad=True, dtype=get_default_dtype())


def he_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: float) -> Tensor:
    """Variance 2 / fan_in: keeps the second moment steady through a following ReLU."""
    limit = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=tuple(shape)), requires_grad=True, dtype=get_default_dtype())


def small_normal(rng: np.random.Generator, shape: Sequence[int], std: float = 0.01) -> Tensor:
    """Near-zero init for prediction layers so initial logits start close to uniform."""
    return Tensor(rng.normal(0.0, std, size=tuple(shape)), requires_grad=True, dtype=get_default_dtype())


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, dtype=get_default_dtype())


def full(shape: Sequence[int], value: float) -> Tensor:
    return Tensor(np.full(tuple(shape), value), requires_grad=True, dtype=get_default_dtype())


class Module:
    """Minimal parameter tree.  Parameters are the Tensor attributes with
    ``requires_grad``; children are Module attributes or lists of Modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"parameter names differ: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for tensor '{name}': checkpoint {value.shape}, model {p.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class ConvBlock(Module):
    """Dense k x k conv, per-channel scale/shift, ReLU."""

    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator, k: int = 3,
                 scale_init: float = 1.0):
        self.stride = stride
        self.weight = he_uniform(rng, (cout, cin, k, k), cin * k * k)
        self.scale = full((cout,), scale_init)
        self.shift = zeros((cout,))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, None, stride=self.stride, padding="same")
        return ops.relu(ops.scale_shift(y, self.scale, self.shift))


class SeparableBlock(Module):
    """Depthwise 3x3 (strided) -> pointwise 1x1 -> per-channel scale/shift -> ReLU."""

    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator, scale_init: float = 1.0):
        self.cin, self.cout, self.stride = cin, cout, stride
        # the depthwise stage is linear (unit gain over its 9 taps); the ReLU gain sits on the pointwise stage
        self.depthwise = glorot_uniform(rng, (cin, 1, 3, 3), 9, 9)
        self.pointwise = he_uniform(rng, (cout, cin, 1, 1), cin)
        self.scale = full((cout,), scale_init)
        self.shift = zeros((cout,))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ValueError(f"SeparableBlock expects {self.cin} input channels, got input {x.shape}")
        y = ops.depthwise_conv2d(x, self.depthwise, stride=self.stride)
        y = ops.conv2d(y, self.pointwise, None, stride=1)
        return ops.relu(ops.scale_shift(y, self.scale, self.shift))


class Deconv(Module):
    """Stride-2 transposed 3x3 conv with bias and ReLU, landing on a requested size."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        # at stride 2 each output pixel sees on average 9/4 taps per input channel
        self.weight = he_uniform(rng, (cin, cout, 3, 3), cin * 9 / 4)
        self.bias = zeros((cout,))

    def __call__(self, x: Tensor, target_hw: tuple[int, int]) -> Tensor:
        return ops.relu(ops.conv_transpose2d(x, self.weight, self.bias, stride=2, target_hw=target_hw, pad=1))


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, init_std: Optional[float] = None):
        if init_std is None:
            self.weight = glorot_uniform(rng, (dout, din), din, dout)
        else:
            self.weight = small_normal(rng, (dout, din), init_std)
        self.bias = zeros((dout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LstmCell(Module):
    """Single LSTM step over a batch of rows.

    Gate blocks along the 4H axis are ordered input, forget, cell, output.
    The forget-gate bias starts at 1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        H = hidden_size
        self.input_size, self.hidden_size = input_size, H
        self.w_x = glorot_uniform(rng, (4 * H, input_size), input_size, 4 * H)
        self.w_h = glorot_uniform(rng, (4 * H, H), H, 4 * H)
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.0
        self.bias = Tensor(bias, requires_grad=True, dtype=get_default_dtype())

    def zero_state(self, batch: int, dtype=None) -> tuple[Tensor, Tensor]:
        dtype = dtype or self.w_x.dtype
        z = np.zeros((batch, self.hidden_size), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def __call__(self, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
        H = self.hidden_size
        if x.shape[-1] != self.input_size or h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
            raise ValueError(f"LstmCell({self.input_size}->{H}) got x {x.shape}, h {h_prev.shape}, c {c_prev.shape}")
        z = ops.add(ops.linear(x, self.w_x, self.bias), ops.linear(h_prev, self.w_h))
        zi, zf, zg, zo = ops.split(z, [H, H, H, H], axis=-1)
        i, f, o = ops.sigmoid(zi), ops.sigmoid(zf), ops.sigmoid(zo)
        g = ops.tanh(zg)
        c = ops.add(ops.mul(f, c_prev), ops.mul(i, g))
        h = ops.mul(o, ops.tanh(c))
        return h, c


def lstm_step(cell: LstmCell, h_prev: Tensor, c_prev: Tensor, v_t: Tensor) -> tuple[Tensor, Tensor]:
    """Functional alias accepting unbatched [H]/[D] vectors as well as batches."""
    if v_t.ndim == 1:
        h, c = cell(ops.reshape(h_prev, (1, -1)), ops.reshape(c_prev, (1, -1)), ops.reshape(v_t, (1, -1)))
        return ops.reshape(h, (-1,)), ops.reshape(c, (-1,))
    return cell(h_prev, c_prev, v_t)


class AttentionCell(Module):
    """Additive scoring ``p_i = v . tanh(W_h h_i + W_d d)`` followed by a softmax over i."""

    def __init__(self, hidden_size: int, attn_size: int, rng: np.random.Generator):
        self.w_h = glorot_uniform(rng, (attn_size, hidden_size), hidden_size, attn_size)
        self.w_d = glorot_uniform(rng, (attn_size, hidden_size), hidden_size, attn_size)
        self.v = glorot_uniform(rng, (attn_size,), attn_size, 1)

    @property
    def attn_size(self) -> int:
        return self.v.shape[0]

    def project_states(self, enc: Tensor) -> Tensor:
        """W_h h_i for a [B, T, H] stack; reusable across decode steps."""
        return ops.linear(enc, self.w_h)

    def weights(self, projected: Tensor, d: Tensor) -> Tensor:
        """Attention weights [B, T] from projected states [B, T, A] and decoder state [B, H]."""
        B, T, A = projected.shape
        q = ops.broadcast_to(ops.reshape(ops.linear(d, self.w_d), (B, 1, A)), (B, T, A))
        s = ops.tanh(ops.add(projected, q))
        p = ops.reshape(ops.matmul(s, ops.reshape(self.v, (A, 1))), (B, T))
        return ops.softmax(p, axis=1)


def attention_scores(cell: AttentionCell, enc_states, dh_t: Tensor) -> Tensor:
    """Attention weights over encoder states.

    ``enc_states`` is either a list of T tensors of shape [H] (single capsule;
    returns [T]) or a stacked [B, T, H] tensor (returns [B, T]).
    """
    if isinstance(enc_states, (list, tuple)):
        if not enc_states:
            raise ValueError("attention_scores needs at least one encoder state")
        enc = ops.reshape(ops.stack(list(enc_states), axis=0), (1, len(enc_states), -1))
        a = cell.weights(cell.project_states(enc), ops.reshape(dh_t, (1, -1)))
        return ops.reshape(a, (len(enc_states),))
    if enc_states.shape[1] < 1:
        raise ValueError("attention_scores needs at least one encoder state")
    return cell.weights(cell.project_states(enc_states), dh_t)


def separable_forward(block: SeparableBlock, x: Tensor) -> Tensor:
    return block(x)


def channels(base: int, width: float, floor: int = 8) -> int:
    """Scale a channel count by the width multiplier, never below ``floor``."""
    return max(floor, int(base * width))


def as_input(x: np.ndarray, dtype: Optional[type] = None) -> Tensor:
    return Tensor(x, dtype=dtype or get_default_dtype())
