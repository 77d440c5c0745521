"""Backend switch for the hot kernels.

Set ``PROGVOL_NUMBA=0`` before import to force the pure-numpy path.
When numba is not installed the numpy path is used regardless.
"""

import os

_flag = os.environ.get("PROGVOL_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    njit = None

USE_NUMBA = HAVE_NUMBA and _requested


def jit(fn):
    """Compile ``fn`` in nopython mode, releasing the GIL; identity without numba."""
    if not HAVE_NUMBA:
        return fn
    return njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
