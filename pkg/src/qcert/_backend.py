"""Kernel backend selection.

Hot numeric loops have two implementations: a numba @njit kernel and a pure
numpy fallback.  The active backend is chosen once at import from the
QCERT_BACKEND environment variable ("numba" or "numpy"); unset means numba
when importable, numpy otherwise.  `set_backend` switches at runtime, which
benchmarks use to compare the two paths on identical inputs.
"""

from __future__ import annotations

import os


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _initial() -> str:
    forced = os.environ.get("QCERT_BACKEND", "").strip().lower()
    if forced == "numpy":
        return "numpy"
    if forced == "numba":
        if not _numba_available():
            raise ImportError("QCERT_BACKEND=numba but numba is not importable")
        return "numba"
    if forced:
        raise ValueError(f"QCERT_BACKEND must be 'numba' or 'numpy', got {forced!r}")
    return "numba" if _numba_available() else "numpy"


_backend = _initial()


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _numba_available():
        raise ImportError("numba backend requested but numba is not importable")
    _backend = name


def thread_cap() -> int:
    """Parallelism cap from QCERT_THREADS (defaults to 1: fully sequential)."""
    raw = os.environ.get("QCERT_THREADS", "1")
    try:
        val = int(raw)
    except ValueError:
        return 1
    return max(1, val)
