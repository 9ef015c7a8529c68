"""Hot loops with a compiled and a pure-numpy implementation.

The compiled (numba) backend is used unless numba cannot be imported or the
environment variable ``TRUNCCOX_DISABLE_NUMBA`` is set to a true value
(``1``, ``true``, ``yes``). Both backends expose the same functions and agree
to floating-point round-off; ``tests/test_kernels.py`` checks this.
"""

import os

from . import _numpy_impl

_disabled = os.environ.get("TRUNCCOX_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

_compiled = None
if not _disabled:
    try:
        from . import _numba_impl as _compiled
    except ImportError:  # numba missing
        _compiled = None

backend_module = _compiled if _compiled is not None else _numpy_impl
BACKEND = "numba" if _compiled is not None else "numpy"

CONVERGED, MAX_ITER, SINGULAR, STALLED = 0, 1, 2, 3

alpha = backend_module.alpha
estep = backend_module.estep
dense_cox_newton = backend_module.dense_cox_newton
self_consistency = backend_module.self_consistency
kendall_sums = backend_module.kendall_sums
swap_chain = backend_module.swap_chain


def get_backend(name: str):
    """Return the kernel module called ``name`` ("numba" or "numpy")."""
    if name == "numpy":
        return _numpy_impl
    if name == "numba":
        if _compiled is None:
            from . import _numba_impl as mod  # raises if numba is absent

            return mod
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


__all__ = [
    "BACKEND",
    "alpha",
    "estep",
    "dense_cox_newton",
    "self_consistency",
    "kendall_sums",
    "swap_chain",
    "get_backend",
]
