"""Numba dispatch.

Set ``NETMPG_DISABLE_NUMBA=1`` to force the pure-numpy code paths; they also
run when numba cannot be imported.
"""
import os

_DISABLED = os.environ.get("NETMPG_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

# TBB in this image is too old for numba; pick the next thread-safe layer quietly
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED

njit_opts = {"cache": True, "nogil": True}


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


prange = numba.prange if HAS_NUMBA else range


def set_threads(n):
    """Cap numba's worker threads; results never depend on this value."""
    if HAS_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
