"""Select the propagation kernels at import time.

The compiled extension is preferred; set ``BRAGGSIM_PURE_PYTHON=1`` to force
the NumPy implementation (used by the cross-check tests and the benchmark).
"""
import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if not os.environ.get("BRAGGSIM_PURE_PYTHON"):
    try:
        from . import _kernels as kernels  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("cython", "python" or None for default)."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
