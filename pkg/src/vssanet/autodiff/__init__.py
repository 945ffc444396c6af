from . import ops
from .gradcheck import GradCheckReport, grad_check, relative_error
from .tensor import (
    NonFiniteError,
    Tape,
    Tensor,
    current_tape,
    default_dtype,
    get_default_dtype,
    grad_enabled,
    is_debug,
    new_tape,
    no_grad,
    set_debug,
    set_default_dtype,
)

__all__ = [
    "ops", "GradCheckReport", "grad_check", "relative_error", "NonFiniteError", "Tape", "Tensor",
    "current_tape", "default_dtype", "get_default_dtype", "grad_enabled", "is_debug", "new_tape",
    "no_grad", "set_debug", "set_default_dtype",
]
