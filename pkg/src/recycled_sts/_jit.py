"""Optional numba acceleration.

Set ``RECYCLED_STS_NO_JIT=1`` before import to run every kernel as plain
numpy/Python. Results are identical up to floating-point reassociation;
the flag exists for debugging and for the benchmark in ``benchmarks/``.
"""

import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _want_jit():
    flag = os.environ.get("RECYCLED_STS_NO_JIT", "").strip().lower()
    if flag in ("1", "true", "yes", "on"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _want_jit()

if USE_NUMBA:
    from numba import njit as _numba_njit

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        if len(args) == 1 and callable(args[0]):
            return _numba_njit(**kwargs)(args[0])
        return _numba_njit(*args, **kwargs)

else:
    njit = _noop_jit
