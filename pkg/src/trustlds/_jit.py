"""Numba toggle.

Hot kernels are compiled with ``numba.njit`` unless the environment variable
``TRUSTLDS_DISABLE_NUMBA`` is set to a truthy value, or numba cannot be
imported. In that case every kernel dispatches to its pure-numpy twin.
"""
import os

_FLAG = os.environ.get("TRUSTLDS_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency here
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged if numba is absent."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
