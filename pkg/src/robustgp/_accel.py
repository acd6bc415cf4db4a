"""Numba switch.

Set ``ROBUSTGP_NUMBA=0`` in the environment before import to run every hot
kernel on its pure-numpy path instead.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_FLAG = os.environ.get("ROBUSTGP_NUMBA", "1").strip().lower()

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` in nopython mode when numba is enabled.

    The undecorated function is always kept as ``func.py_func`` so callers can
    reach the interpreted version regardless of the switch.
    """
    if numba is None:
        func.py_func = func
        return func
    return numba.njit(cache=True, nogil=True)(func)
