"""Kernel backend selection.

Hot loops are compiled with numba when it is importable.  Setting
``HTMSTREAM_BACKEND=numpy`` (or ``HTMSTREAM_DISABLE_NUMBA=1``) forces the
pure-numpy fallback; the choice is made once, at import time.
"""

import os

_requested = os.environ.get("HTMSTREAM_BACKEND", "").strip().lower()
_disabled = os.environ.get("HTMSTREAM_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    if _requested == "numpy" or _disabled:
        raise ImportError("numba disabled by environment")
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def jit(fn):
    """Compile ``fn`` with numba in nopython mode, or return it unchanged."""
    if HAS_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn
