"""Numba switch.

Set ``LINEXPLORE_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels (useful for debugging and for the kernel benchmark).
"""

import os

_FLAG = os.environ.get("LINEXPLORE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True)`` when numba is usable, otherwise identity."""
    if numba is None:
        return func
    return numba.njit(cache=True)(func)
