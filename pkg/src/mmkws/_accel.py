"""Optional numba acceleration.

Set ``MMKWS_PURE_NUMPY=1`` to force the pure-numpy kernels; numba is also
skipped silently when it cannot be imported.
"""
import os

PURE_NUMPY = os.environ.get("MMKWS_PURE_NUMPY", "0").lower() not in ("", "0", "false", "no")

try:
    if PURE_NUMPY:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if _njit is None:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
