"""Single-shot traffic-sign detector with spatial sequence attention, on a numpy autodiff core."""

import os as _os

if "VSSA_THREADS" in _os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["VSSA_THREADS"])

__version__ = "0.1.0"
