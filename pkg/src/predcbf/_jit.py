"""Numba switch for the hot kernels.

Set ``PCBF_NUMBA=0`` in the environment before import to run every kernel as
plain numpy code. The kernels are written in the subset of numpy that numba
compiles, so both paths execute the same source.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("PCBF_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
