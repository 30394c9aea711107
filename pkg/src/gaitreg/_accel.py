"""Numba switch.

Hot loops are written once as plain Python over numpy arrays and compiled
with ``numba.njit`` unless ``GAITREG_DISABLE_NUMBA=1`` is set (or numba is
missing). Each kernel module also ships a vectorised numpy path; ``use_numba()``
decides which one the public wrappers call.
"""

from __future__ import annotations

import os

_FLAG = "GAITREG_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


def use_numba() -> bool:
    if _numba is None:
        return False
    return os.environ.get(_FLAG, "0").lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    kwargs.setdefault("cache", True)
    if _numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _numba.njit(*args, **kwargs)
