"""Numba switch.

Set ``FSOGNN_DISABLE_NUMBA=1`` to force the pure-numpy kernels (also used
automatically when numba cannot be imported).
"""

import os

_DISABLED = os.environ.get("FSOGNN_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)

try:
    if _DISABLED:
        raise ImportError("disabled by FSOGNN_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
