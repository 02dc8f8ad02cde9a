"""Backend switch for the compiled hot loops.

Set ``CHANCEOCP_DISABLE_NUMBA=1`` before import to run every kernel on the
pure-numpy path. Both paths are deterministic; they agree to round-off.
"""
import os

_FLAG = os.environ.get("CHANCEOCP_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in {"1", "true", "yes", "on"}


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op when numba is unavailable."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
