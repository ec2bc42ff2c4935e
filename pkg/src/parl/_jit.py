"""Kernel compilation switch.

Hot loops are written once in the subset of Python/numpy that numba can
compile. Setting ``PARL_PURE_NUMPY=1`` in the environment before import skips
compilation and runs the very same functions as plain Python, which is the
reference path used for equivalence checks and on machines without numba.
"""
import os

_FLAG = os.environ.get("PARL_PURE_NUMPY", "").strip().lower()
PURE = _FLAG in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    PURE = True

JIT_ENABLED = not PURE


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` unless the pure path is selected.

    The undecorated function stays reachable as ``fn.py_func`` either way.
    """
    if PURE:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True, nogil=True, error_model="numpy")(fn)
