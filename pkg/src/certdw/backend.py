"""Selection between the numba-jitted kernels and the numpy fallback.

The environment variable ``CERTDW_BACKEND`` picks the path explicitly
(``numba`` or ``numpy``); unset, numba is used when importable. Selection
happens lazily at first kernel use and is then cached for the process.

Determinism note: each backend is fully deterministic on its own, but the
two paths are not guaranteed bit-identical to each other (summation order
inside reductions differs), so reproduction recipes should pin the backend.
"""

import os

from .errors import DomainError

_active = None  # (module, name) once selected


def _select():
    requested = os.environ.get("CERTDW_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise DomainError(
            f"CERTDW_BACKEND must be 'numba' or 'numpy', got {requested!r}"
        )
    if requested == "numpy":
        from . import _kernels_numpy
        return _kernels_numpy, "numpy"
    if requested == "numba":
        from . import _kernels_numba
        return _kernels_numba, "numba"
    try:
        from . import _kernels_numba
        return _kernels_numba, "numba"
    except ImportError:
        from . import _kernels_numpy
        return _kernels_numpy, "numpy"


def kernels():
    """The active kernel module (lazy, cached)."""
    global _active
    if _active is None:
        _active = _select()
    return _active[0]


def backend_name() -> str:
    """Name of the active backend: 'numba' or 'numpy'."""
    kernels()
    return _active[1]


def reset_backend():
    """Drop the cached selection so CERTDW_BACKEND is re-read (tests)."""
    global _active
    _active = None
