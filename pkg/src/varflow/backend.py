"""Kernel backend selection.

The hot inner loops (FISTA iterations, cost-volume correlation, quad
fitting) exist twice: a numba ``@njit`` build in ``_kernels_numba`` and a
vectorized numpy build in ``_kernels_numpy``.  Both produce the same
results; the numba build is typically 10-100x faster on large grids.

Selection, in order of precedence:

* ``varflow.backend.use("numpy" | "numba" | "auto")`` at runtime,
* the ``VARFLOW_BACKEND`` environment variable (same values),
* default: numba when importable, numpy otherwise.

``VARFLOW_THREADS`` caps the numba worker threads.  All parallel kernels
write disjoint output elements and perform no cross-thread reductions, so
results are bit-identical for any thread count.
"""

import os

from .errors import DataError

_CHOICES = ("auto", "numba", "numpy")

_requested = os.environ.get("VARFLOW_BACKEND", "auto").strip().lower() or "auto"
_active = None  # resolved module, cached


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _apply_thread_cap():
    cap = os.environ.get("VARFLOW_THREADS", "").strip()
    if not cap:
        return
    import numba

    n = max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def use(name):
    """Select the kernel backend; 'auto' restores the default resolution."""
    global _requested, _active
    if name not in _CHOICES:
        raise DataError(f"unknown backend {name!r}, expected one of {_CHOICES}")
    _requested = name
    _active = None


def active_name():
    """Name of the backend that get_kernels() will return."""
    if _requested == "numpy":
        return "numpy"
    if _requested == "numba":
        return "numba"
    return "numba" if _numba_available() else "numpy"


def get_kernels():
    """Resolve and cache the active kernel module."""
    global _active
    if _active is not None:
        return _active
    name = active_name()
    if name == "numba":
        import warnings

        # an old system TBB makes numba fall back to another threading
        # layer at first parallel launch; harmless here
        warnings.filterwarnings("ignore", message="The TBB threading layer requires")
        _apply_thread_cap()
        from . import _kernels_numba as mod
    else:
        from . import _kernels_numpy as mod
    _active = mod
    return mod
