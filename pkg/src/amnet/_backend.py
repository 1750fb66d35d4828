"""Kernel backend selection.

``AMNET_BACKEND=numpy`` forces the pure-numpy kernels; ``numba`` (the default
when numba imports cleanly) compiles the same source with ``@njit``. The
choice is read once, when this module is first imported.
"""

import os

ENV_VAR = "AMNET_BACKEND"
BACKENDS = ("numba", "numpy")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def numba_available():
    return numba is not None


def default_backend():
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested:
        if requested not in BACKENDS:
            raise ValueError(f"{ENV_VAR} must be one of {BACKENDS}, got {requested!r}")
        if requested == "numba" and numba is None:
            raise ValueError(f"{ENV_VAR}=numba but numba is not installed")
        return requested
    return "numba" if numba is not None else "numpy"


BACKEND = default_backend()


def _identity(fn):
    return fn


# Selected once at import; switching backends needs a fresh interpreter.
jit = numba.njit(nogil=True, cache=True) if BACKEND == "numba" else _identity
