"""Numba acceleration layer.

The hot kernels in :mod:`cage2pomdp.kernels` are written as plain functions
over numpy arrays and scalars. By default they are compiled with numba's
``@njit``; setting the environment variable ``CAGE2POMDP_NUMBA=0`` (or numba
being unavailable) selects the interpreted pure-numpy path. Both paths consume
randomness identically and produce bit-identical results.
"""

import os

_FALSY = {"0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("CAGE2POMDP_NUMBA", "1").strip().lower() not in _FALSY


NUMBA_ENABLED = False

if _numba_requested():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:

    def maybe_jit(func):
        return _njit(cache=True)(func)

else:

    def maybe_jit(func):
        return func
