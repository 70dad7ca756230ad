"""Switch between numba-compiled kernels and their pure-numpy twins.

Set ``ZONEREC_NUMBA=0`` in the environment before import to force the numpy
path (useful on platforms without LLVM, and for cross-checking results).
"""

from __future__ import annotations

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_flag = os.environ.get("ZONEREC_NUMBA", "1").strip().lower()
USE_NUMBA: bool = _numba is not None and _flag not in ("0", "false", "no", "off")
HAVE_NUMBA: bool = _numba is not None


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Kernels are always compiled when numba exists so that both paths stay
    callable for tests and benchmarks; ``USE_NUMBA`` only controls dispatch.
    """
    if _numba is None:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
