"""Kernel selection: compiled extension when available, numpy otherwise.

Set ``ISGD_PURE_PYTHON=1`` to force the numpy kernels.

The compiled dense kernels loop sample by sample, which beats numpy's batched
calls on small networks but loses to BLAS once layers get wide, so
:func:`dense_kernels` hands larger networks to numpy.  The crossover was
measured with ``benchmarks/bench_kernels.py``.
"""
import os

from . import _pykernels

if os.environ.get("ISGD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"

# Above this many parameters the numpy kernels win (batch of 64, one core).
COMPILED_MAX_PARAMS = 1500

LOSS_NLL = _pykernels.LOSS_NLL
LOSS_MSE = _pykernels.LOSS_MSE


def available_backends():
    """Map backend name to kernel module for every backend importable here."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found


def dense_kernels(n_params):
    """Kernel module for a dense network with ``n_params`` parameters."""
    return kernels if n_params <= COMPILED_MAX_PARAMS else _pykernels
