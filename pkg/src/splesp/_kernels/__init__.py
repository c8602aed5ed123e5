"""Hot kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; otherwise, or when
``SPLESP_PURE_PYTHON=1`` is set, the numpy versions are used. Both expose
``ciou_with_grad``, ``nms`` and ``greedy_match`` with identical contracts.
"""
import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("SPLESP_PURE_PYTHON", "") in ("", "0"):
    _impl = compiled_backend
    BACKEND = "cython"
else:
    _impl = python_backend
    BACKEND = "python"

ciou_with_grad = _impl.ciou_with_grad
nms = _impl.nms
greedy_match = _impl.greedy_match

__all__ = ["BACKEND", "ciou_with_grad", "nms", "greedy_match", "python_backend", "compiled_backend"]
