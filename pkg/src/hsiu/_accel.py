"""JIT toggle for the hot kernels.

Set HSIU_NUMBA=0 to force the pure-Python/numpy fallback: the same kernel
code then runs undecorated, which is what the benchmark compares against.
"""

import os


def _env_enabled() -> bool:
    val = os.environ.get("HSIU_NUMBA", "1").strip().lower()
    return val not in ("0", "false", "no", "off")


NUMBA_ENABLED = False

if _env_enabled():
    try:
        from numba import njit, prange  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        pass

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        def decorate(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorate

    def prange(*args):
        return range(*args)


def py_func(kernel):
    """Return the uncompiled version of a kernel (the kernel itself in fallback mode)."""
    return getattr(kernel, "py_func", kernel)


def set_worker_threads(n: int) -> int:
    """Cap numba worker threads; n <= 0 selects the sequential reference mode.

    Returns the thread count actually in effect.
    """
    if not NUMBA_ENABLED:
        return 1
    from numba import config, set_num_threads

    hw = config.NUMBA_NUM_THREADS
    eff = 1 if n <= 0 else min(n, hw)
    set_num_threads(eff)
    return eff
