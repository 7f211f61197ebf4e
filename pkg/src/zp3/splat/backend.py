"""Kernel backend selection.

ZP3_BACKEND=numpy forces the pure-numpy kernels, ZP3_BACKEND=numba requires
the JIT kernels; unset picks numba when importable, numpy otherwise.
"""
import os

from . import _kernels_numpy

try:
    from . import _kernels_numba
    _NUMBA_OK = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_numba = None
    _NUMBA_OK = False


def active_backend() -> str:
    forced = os.environ.get("ZP3_BACKEND", "").strip().lower()
    if forced == "numpy":
        return "numpy"
    if forced == "numba":
        if not _NUMBA_OK:
            raise RuntimeError("ZP3_BACKEND=numba but numba is not importable")
        return "numba"
    if forced:
        raise RuntimeError(f"unknown ZP3_BACKEND {forced!r}")
    return "numba" if _NUMBA_OK else "numpy"


def get_kernels(name: str | None = None):
    name = name or active_backend()
    if name == "numba":
        if not _NUMBA_OK:
            raise RuntimeError("numba backend requested but unavailable")
        return _kernels_numba
    if name == "numpy":
        return _kernels_numpy
    raise RuntimeError(f"unknown backend {name!r}")
