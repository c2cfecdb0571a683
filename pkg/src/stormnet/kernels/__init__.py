"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops; the numpy backend is a
pure-numpy fallback that needs no compiler. Select with the environment
variable ``STORMNET_BACKEND`` ("numba" or "numpy", default "numba" when
numba imports, else "numpy"), or at runtime with :func:`set_backend`.

Both backends honor the same numeric contracts: matmul sums strictly
left-to-right over the inner axis (bit-identical across backends), the
random bit stream is bit-identical, and convolution/pooling agree with
the reference loop within 1e-12 absolute.
"""

import os
import warnings

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
_active_name = None
_active = None


def _load_numba_backend():
    if "numba" not in _BACKENDS:
        from . import numba_backend

        _BACKENDS["numba"] = numba_backend
    return _BACKENDS["numba"]


def set_backend(name: str) -> None:
    """Switch the active kernel backend ("numba" or "numpy")."""
    global _active_name, _active
    if name == "numpy":
        _active = numpy_backend
    elif name == "numba":
        _active = _load_numba_backend()
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    _active_name = name


def active_backend() -> str:
    return _active_name


def get_backend(name: str):
    """Return a backend module by name without switching the active one."""
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        return _load_numba_backend()
    raise ValueError(f"unknown backend {name!r}")


def _init_from_env() -> None:
    requested = os.environ.get("STORMNET_BACKEND", "").strip().lower()
    if requested:
        set_backend(requested)
        return
    try:
        set_backend("numba")
    except ImportError:
        warnings.warn("numba unavailable; falling back to the pure-numpy backend")
        set_backend("numpy")


_init_from_env()


def matmul(a, b):
    return _active.matmul(a, b)


def conv2d(xpad, w):
    return _active.conv2d(xpad, w)


def conv2d_backward(xpad, w, grad_z, need_input_grad=True, need_weight_grad=True):
    return _active.conv2d_backward(xpad, w, grad_z, need_input_grad, need_weight_grad)


def maxpool2x2(x):
    return _active.maxpool2x2(x)


def maxpool2x2_backward(grad_out, argmax):
    return _active.maxpool2x2_backward(grad_out, argmax)


def xoshiro_fill(state, out):
    return _active.xoshiro_fill(state, out)
