"""Numba acceleration switch.

Hot kernels are written twice: a numba ``@njit`` version and a vectorized
pure-numpy version. The env variable ``BRAGGTOMO_NO_NUMBA=1`` selects the
numpy path at import time (useful on platforms without a working numba, and
for the benchmark comparing both). Both paths produce bit-identical results;
the test suite asserts this on small instances.
"""

import os

NUMBA_DISABLED = os.environ.get("BRAGGTOMO_NO_NUMBA", "").strip() in ("1", "true", "yes")

if not NUMBA_DISABLED:
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

if not HAVE_NUMBA:

    def prange(*args):  # noqa: F811
        return range(*args)

    def njit(*args, **kwargs):  # noqa: F811
        # plain pass-through decorator, usable bare or with options
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


USE_NUMBA = HAVE_NUMBA


def set_threads(n: int) -> None:
    """Set the worker count for parallel kernels (no-op on the numpy path)."""
    if USE_NUMBA:
        import numba

        numba.set_num_threads(max(1, int(n)))
