"""Numba switch shared by the hot kernels.

Set ``CRCIM_DISABLE_NUMBA=1`` to force the pure-numpy implementations, e.g. for
debugging or on platforms without numba. Both paths consume the same pre-drawn
noise arrays, so they produce identical codes.
"""
import os

DISABLE_ENV = "CRCIM_DISABLE_NUMBA"

_disabled = os.environ.get(DISABLE_ENV, "0").strip().lower() in ("1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
