"""Numba switch shared by the hot kernels.

Set ``BRC_NUMBA=0`` in the environment to force the pure-numpy code paths.
The flag is read once at import time.
"""

import os

USE_NUMBA = os.environ.get("BRC_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    USE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn
