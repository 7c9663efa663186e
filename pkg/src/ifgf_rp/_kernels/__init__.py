"""Hot kernels with a compiled (numba) and a pure-numpy implementation.

``impl`` is the module selected by ``IFGF_RP_BACKEND``; both modules stay
importable so they can be compared directly.
"""

from .._backend import USE_NUMBA
from . import numpy_impl

if USE_NUMBA:
    from . import numba_impl
    impl = numba_impl
else:
    numba_impl = None
    impl = numpy_impl


def get_impl(name):
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from . import numba_impl as mod
        return mod
    raise ValueError(f"unknown backend {name!r}")


__all__ = ["impl", "get_impl", "numpy_impl", "numba_impl"]
