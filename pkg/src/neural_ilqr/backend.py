"""Kernel backend selection: numba-compiled or pure numpy.

Hot numeric kernels live in :mod:`neural_ilqr.kernels` and are written so the
same source runs under ``numba.njit`` and plain Python. The environment
variable ``NEURAL_ILQR_NUMBA`` picks the path at import time:

* unset / ``1`` -> compile with numba when it is importable (default)
* ``0`` / ``false`` / ``off`` / ``no`` -> pure numpy fallback

``benchmarks/bench_kernels.py`` times both paths.
"""

import os

_FLAG = os.environ.get("NEURAL_ILQR_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("0", "false", "off", "no")

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised via the env-flag fallback
    numba = None
    NUMBA_AVAILABLE = False

NUMBA_ENABLED = NUMBA_REQUESTED and NUMBA_AVAILABLE


def jit_kernel(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(func)
    return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
