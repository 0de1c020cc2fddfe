"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``S2HPRUNE_PURE_PYTHON=1`` to force the fallback.  The compiled kernels
only handle float64; other dtypes always take the numpy path.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("S2HPRUNE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def im2col(xp, kh, kw, stride, backend=None):
    impl = _pick(xp, backend)
    if impl is _compiled:
        return impl.im2col(np.ascontiguousarray(xp), kh, kw, stride)
    return impl.im2col(xp, kh, kw, stride)


def col2im(cols, padded_shape, kh, kw, stride, backend=None):
    impl = _pick(cols, backend)
    if impl is _compiled:
        return impl.col2im(np.ascontiguousarray(cols), tuple(padded_shape), kh, kw, stride)
    return impl.col2im(cols, tuple(padded_shape), kh, kw, stride)


def _pick(arr, backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        if arr.dtype == np.float64:
            return _compiled
        return _kernels_py
    if backend == "python":
        return _kernels_py
    raise ValueError(f"unknown kernel backend {backend!r}")
