"""Kernel dispatch.

The compiled extension is used when it was built and ``CROSSCBR_BACKEND`` is
not set to ``python``; otherwise the numpy/scipy fallback is used.
"""
import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("CROSSCBR_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"

__all__ = ["BACKEND", "csr_matmul", "lazy_adam_rows", "available_backends"]


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def csr_matmul(indptr, indices, data, dense, n_rows, backend=None):
    """Return ``A @ dense`` for the CSR matrix ``A`` with ``n_rows`` rows."""
    dense = np.ascontiguousarray(dense)
    impl = _impl(backend)
    if impl is _compiled and dense.dtype != np.float64:
        impl = _fallback
    return impl.csr_matmul(indptr, indices, data, dense, n_rows)


def lazy_adam_rows(param, exp_avg, exp_avg_sq, grad, rows, lr, beta1, beta2, eps,
                   bias_corr1, bias_corr2, backend=None):
    """In-place Adam update restricted to ``rows``; other rows are untouched."""
    impl = _impl(backend)
    if impl is _compiled and param.dtype != np.float64:
        impl = _fallback
    impl.lazy_adam_rows(param, exp_avg, exp_avg_sq, np.ascontiguousarray(grad),
                        np.ascontiguousarray(rows, dtype=np.int64),
                        float(lr), float(beta1), float(beta2), float(eps),
                        float(bias_corr1), float(bias_corr2))
