"""Optional numba acceleration.

Set ``SPEAKERINV_DISABLE_NUMBA=1`` to force the pure-numpy code paths, e.g. to
compare backends or to run on a platform without numba.
"""
from __future__ import annotations

import os

_FLAG = "SPEAKERINV_DISABLE_NUMBA"


def _env_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    from numba import njit as _numba_njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - depends on environment
    NUMBA_AVAILABLE = False
    _numba_njit = None

USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is usable, identity decorator otherwise.

    The compiled function is always built when numba is installed, so that the
    benchmark can compare both paths regardless of the env flag.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)

    def wrap(fn):
        if not NUMBA_AVAILABLE:
            return fn
        return _numba_njit(**kwargs)(fn)

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def select(fast, slow):
    """Pick the numba implementation unless disabled."""
    return fast if USE_NUMBA else slow


__all__ = ["njit", "NUMBA_AVAILABLE", "USE_NUMBA", "backend_name", "select"]
