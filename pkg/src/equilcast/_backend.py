"""Kernel backend selection.

Set ``EQUILCAST_BACKEND=numpy`` to force the pure-numpy code paths, e.g. when
numba is unavailable or when comparing against the JIT kernels.
"""
import os

BACKEND_ENV = "EQUILCAST_BACKEND"


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _select():
    requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not _numba_available():
        return "numpy"
    return requested


BACKEND = _select()
USE_NUMBA = BACKEND == "numba"
