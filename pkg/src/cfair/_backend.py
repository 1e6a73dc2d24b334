"""Kernel backend selection.

Hot loops are compiled with numba when it is importable. Setting
``CFAIR_DISABLE_NUMBA=1`` forces the pure-numpy implementations, which
compute the same quantities and are used as the reference path in tests
and benchmarks.
"""
import os

_DISABLED = os.environ.get("CFAIR_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or an identity decorator."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)
