"""Backend selection for the hot numerical kernels.

The numba path is the default.  Setting ``IFGF_RP_BACKEND=numpy`` in the
environment (before import) selects the vectorized pure-numpy fallback,
which has identical contracts and is used for cross-checking and on
platforms where numba is unavailable.
"""

import functools
import os

BACKEND_ENV = "IFGF_RP_BACKEND"
WORKERS_ENV = "IFGF_WORKERS"

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None

if _requested not in ("numba", "numpy"):
    raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {_requested!r}")

USE_NUMBA = _requested == "numba" and _nb is not None

if _nb is not None:
    njit = functools.partial(_nb.njit, cache=True, nogil=True)
    pnjit = functools.partial(_nb.njit, cache=True, nogil=True, parallel=True)
    prange = _nb.prange
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

    pnjit = njit
    prange = range


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_workers(n):
    """Set the numba thread count (clamped to what the runtime allows)."""
    if _nb is None or n is None:
        return 1
    n = max(1, min(int(n), _nb.config.NUMBA_NUM_THREADS))
    _nb.set_num_threads(n)
    return n


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        return int(env)
    return None
