"""Kernel backend selection.

Two interchangeable implementations of the hot numeric kernels exist:

* :mod:`fgcam.kernels.accel` — numba ``@njit`` compiled loops (default).
* :mod:`fgcam.kernels.fallback` — pure numpy.

The environment variable ``FGCAM_KERNELS`` picks the backend at import
time: ``numba``, ``numpy``, or ``auto`` (numba when importable, numpy
otherwise).  ``use_backend`` swaps backends inside a process, which the
test suite and the benchmark use to exercise both paths.
"""

import contextlib
import logging
import os

from . import fallback

_log = logging.getLogger(__name__)

_active = None


def _load_accel():
    # prefer OMP so environments with an old TBB do not warn on import
    os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")
    from . import accel  # deferred: importing numba is slow
    return accel


def _select_initial():
    choice = os.environ.get("FGCAM_KERNELS", "auto").lower()
    if choice == "numpy":
        return fallback
    if choice == "numba":
        return _load_accel()
    if choice != "auto":
        raise ValueError(f"FGCAM_KERNELS must be numba, numpy or auto, got {choice!r}")
    try:
        return _load_accel()
    except ImportError:
        _log.warning("numba unavailable, using the pure-numpy kernel backend")
        return fallback


def get_backend():
    """Return the active kernel module, selecting one on first use."""
    global _active
    if _active is None:
        _active = _select_initial()
    return _active


def backend_name() -> str:
    return get_backend().name


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily force a backend (``numba`` or ``numpy``)."""
    global _active
    previous = get_backend()
    _active = fallback if name == "numpy" else _load_accel()
    try:
        yield _active
    finally:
        _active = previous
