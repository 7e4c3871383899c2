"""Kernel backend selection.

The hot kernels (top-K selection and the fused loss rows) exist twice:
a numba @njit build and a pure-numpy fallback with identical signatures
and the same tie-breaking rules.  The active backend is chosen once per
process from the SOFTNCE_BACKEND environment variable:

    auto   use numba when importable, else numpy (default)
    numba  require numba, fail loudly if missing
    numpy  force the fallback even when numba is present

Matrix products stay in numpy BLAS on both paths; only the per-row
selection and softmax/gradient fusion differ.
"""

import os

from .errors import ConfigError

ENV_VAR = "SOFTNCE_BACKEND"
_VALID = ("auto", "numba", "numpy")

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_active: str | None = None


def resolve(name: str | None = None) -> str:
    """Map a requested backend name to a concrete one ("numba" or "numpy")."""
    if name is None:
        name = os.environ.get(ENV_VAR, "auto").strip().lower() or "auto"
    if name not in _VALID:
        raise ConfigError(
            f"unknown backend {name!r}, expected one of {', '.join(_VALID)}"
        )
    if name == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if name == "numba" and not HAS_NUMBA:
        raise ConfigError("backend 'numba' requested but numba is not importable")
    return name


def active_backend() -> str:
    """The backend kernels currently dispatch to."""
    global _active
    if _active is None:
        _active = resolve()
    return _active


def set_backend(name: str) -> str:
    """Override the active backend (tests and benchmarks). Returns the concrete name."""
    global _active
    _active = resolve(name)
    return _active
