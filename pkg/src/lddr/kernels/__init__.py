"""Hot inner loops behind a backend switch.

numba-compiled kernels are used when numba imports cleanly; setting
``LDDR_DISABLE_NUMBA=1`` forces the pure-numpy path. Both backends share one
contract, so everything above this module is backend-agnostic.
"""
import os

_FALSY = ("", "0", "false", "no")

BACKEND = "numpy"
if os.environ.get("LDDR_DISABLE_NUMBA", "").strip().lower() in _FALSY:
    try:
        from ._numba import bilinear_gather, im2col, lrn, maxpool

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if BACKEND == "numpy":
    from ._numpy import bilinear_gather, im2col, lrn, maxpool

__all__ = ["BACKEND", "bilinear_gather", "im2col", "lrn", "maxpool"]
