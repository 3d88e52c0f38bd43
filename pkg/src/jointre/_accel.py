"""Optional numba acceleration.

Set ``JOINTRE_NO_NUMBA=1`` before import to force the pure-numpy kernels.
"""
import os

try:
    import numba
    from numba import njit as _njit
    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover
    NUMBA_INSTALLED = False

USE_NUMBA = NUMBA_INSTALLED and os.environ.get("JOINTRE_NO_NUMBA", "0") not in ("1", "true", "yes")

# Without Intel SVML numba lowers tanh to a scalar libm call, several times
# slower than numpy's SIMD tanh; kernels dominated by tanh check this.
NUMBA_VECTOR_MATH = USE_NUMBA and bool(getattr(numba.config, "USING_SVML", False))


def optional_njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise.

    The undecorated function is kept on ``.py_func`` in both cases so callers
    can always reach the interpreted version.
    """
    def decorator(func):
        if NUMBA_INSTALLED:
            jitted = _njit(*args, **kwargs)(func)
            return jitted
        func.py_func = func
        return func
    return decorator
