"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .ops import mul, sum as tsum
from .tensor import Tensor, new_tape, no_grad

ShapeOrTensor = Union[Tensor, tuple]


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst: Optional[tuple] = None  # (tensor index, coordinate)
    message: str = ""
    errors: list = field(default_factory=list, repr=False)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e} "
                f"checked={self.n_checked} worst={self.worst} {self.message}").rstrip()


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[ShapeOrTensor], tolerance: float = 1e-4,
               eps: float = 1e-5, wrt: Sequence[Tensor] = (), seed: int = 0,
               floor: float = 1e-5) -> GradCheckReport:
    """Compare every analytic partial of ``fn`` against central differences.

    ``inputs`` may mix tensors and shapes; shapes become uniform [-1, 1] float64
    tensors drawn from ``seed``.  ``wrt`` lists extra tensors (typically module
    parameters reached through a closure) to differentiate.  Non-scalar outputs
    are reduced with a fixed random projection.  Every tensor involved must be
    float64.
    """
    rng = np.random.default_rng(seed)
    tensors = []
    for item in inputs:
        if isinstance(item, Tensor):
            tensors.append(item)
        else:
            tensors.append(Tensor(rng.uniform(-1, 1, size=tuple(item)), dtype=np.float64))
    checked = [t for t in tensors] + [t for t in wrt if all(t is not u for u in tensors)]
    for t in checked:
        if t.dtype != np.float64:
            raise ValueError(f"grad_check needs 64-bit tensors, got {t.dtype} for shape {t.shape}")
        t.requires_grad = True
        t.grad = None

    with no_grad():
        probe = fn(*tensors)
    if not np.all(np.isfinite(probe.data)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(probe.data))[0])
        return GradCheckReport(False, float("inf"), tolerance, 0, (None, bad),
                               f"non-finite forward output at {bad}")
    proj = None if probe.size == 1 else rng.uniform(-1, 1, size=probe.shape)

    def scalar_value() -> float:
        with no_grad():
            out = fn(*tensors).data
        if not np.all(np.isfinite(out)):
            raise FloatingPointError
        return float(out.sum() if proj is None else (out * proj).sum())

    with new_tape():
        out = fn(*tensors)
        loss = out if proj is None else tsum(mul(out, Tensor(proj, dtype=np.float64)))
        loss.backward()

    max_err, worst, n, errors = 0.0, None, 0, []
    for ti, t in enumerate(checked):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(analytic)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(analytic))[0])
            return GradCheckReport(False, float("inf"), tolerance, n, (ti, bad),
                                   f"non-finite analytic gradient at tensor {ti} {bad}")
        numeric = np.empty_like(t.data)
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            try:
                flat[j] = orig + eps
                fp = scalar_value()
                flat[j] = orig - eps
                fm = scalar_value()
            except FloatingPointError:
                coord = tuple(int(i) for i in np.unravel_index(j, t.shape))
                return GradCheckReport(False, float("inf"), tolerance, n, (ti, coord),
                                       f"non-finite output while perturbing tensor {ti} at {coord}")
            finally:
                flat[j] = orig
            numeric.reshape(-1)[j] = (fp - fm) / (2 * eps)
        err = relative_error(analytic, numeric, floor)
        errors.append(err)
        n += err.size
        if err.size and err.max() > max_err:
            max_err = float(err.max())
            worst = (ti, tuple(int(i) for i in np.unravel_index(int(err.argmax()), t.shape)))
    for t in checked:
        t.grad = None
    return GradCheckReport(max_err < tolerance, max_err, tolerance, n, worst, errors=errors)
