"""Optional numba acceleration.

Kernels are written in the subset of numpy that numba understands and are
decorated with :func:`njit` from this module.  Setting the environment
variable ``TREEVIMP_DISABLE_NUMBA=1`` (or running without numba installed)
turns the decorator into a no-op so the same code runs as plain numpy.
"""

import os

_disabled = os.environ.get("TREEVIMP_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

USE_NUMBA = _numba is not None


def njit(func=None, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or the identity decorator."""
    if not USE_NUMBA:
        if callable(func):
            return func
        return lambda f: f
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    if callable(func):
        return _numba.njit(**opts)(func)
    return _numba.njit(**opts)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
