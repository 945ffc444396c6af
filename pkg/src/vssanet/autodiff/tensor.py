"""Tensor type and the reverse-mode tape it records onto."""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

_state = threading.local()

_DEFAULT_DTYPE = np.float32
_DEBUG = False


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf from finite inputs."""


def set_default_dtype(dtype) -> None:
    """Select the precision new tensors are created with (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_debug(enabled: bool) -> None:
    """Enable finite-value checks after every recorded forward op."""
    global _DEBUG
    _DEBUG = bool(enabled)


def is_debug() -> bool:
    return _DEBUG


class Node:
    __slots__ = ("op", "inputs", "out", "backward_fn")

    def __init__(self, op: str, inputs: Sequence["Tensor"], out: "Tensor", backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.out = out
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of differentiable ops.

    Insertion order is a valid topological order, so ``backward`` simply walks
    the nodes in reverse.  A tape is consumed by ``backward``.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence["Tensor"], out: "Tensor", backward_fn: Callable) -> None:
        out.node_id = len(self.nodes)
        out._tape = self
        self.nodes.append(Node(op, inputs, out, backward_fn))

    def clear(self) -> None:
        for node in self.nodes:
            node.out._tape = None
        self.nodes = []

    def backward(self, root: "Tensor", grad: Optional[np.ndarray] = None) -> None:
        if root._tape is not self:
            raise RuntimeError("tensor was not recorded on this tape")
        if grad is None:
            if root.data.size != 1:
                raise ValueError("backward on a non-scalar tensor needs an explicit gradient")
            grad = np.ones_like(root.data)
        root._accumulate(np.asarray(grad, dtype=root.data.dtype).reshape(root.shape))
        for idx in range(root.node_id, -1, -1):
            node = self.nodes[idx]
            g = node.out.grad
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                inp._accumulate(gi)
            if not node.out._retain:
                node.out.grad = None
        self.clear()


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = [Tape()]
    return stack


def current_tape() -> Tape:
    return _tape_stack()[-1]


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextlib.contextmanager
def new_tape():
    """Record ops inside the block onto a fresh tape."""
    stack = _tape_stack()
    tape = Tape()
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


class Tensor:
    """Dense n-d array with an optional gradient buffer.

    ``data`` is always a contiguous numpy array of float32 or float64.  Leaf
    tensors with ``requires_grad=True`` accumulate into ``grad`` when a
    backward pass reaches them.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name
        self._tape: Optional[Tape] = None
        self._retain = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def retain_grad(self) -> "Tensor":
        """Keep this intermediate tensor's gradient after backward."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if self._tape is None:
            if not self.requires_grad:
                raise RuntimeError("tensor does not require grad and has no recorded history")
            g = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
            self._accumulate(g.reshape(self.shape))
            return
        self._tape.backward(self, grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; the strict-shape semantics live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, ops.as_tensor(other, like=self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, ops.as_tensor(other, like=self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(ops.as_tensor(other, like=self), self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, ops.as_tensor(other, like=self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            from . import ops
            return ops.scale(self, 1.0 / float(other))
        return NotImplemented

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)


def check_finite(op: str, out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NonFiniteError(f"{op} produced a non-finite value at index {tuple(int(i) for i in bad)}")
