"""Backend switch for the compiled kernels.

Set ``PHI4_DISABLE_NUMBA=1`` to force the pure-numpy fallbacks. The flag is
read once at import time; tests that need both paths call the ``_numba`` and
``_numpy`` variants in :mod:`phi4expand.kernels` directly.
"""

import os

_flag = os.environ.get("PHI4_DISABLE_NUMBA", "").strip().lower()
NUMBA_REQUESTED = _flag not in ("1", "true", "yes", "on")

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    _njit = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_REQUESTED and NUMBA_AVAILABLE


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if _njit is not None:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
