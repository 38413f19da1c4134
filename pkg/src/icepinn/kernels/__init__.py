"""Hot numeric kernels with two interchangeable backends.

The convolution, pooling, and transposed-convolution forward/backward
passes dominate training runtime. Each exists twice:

* ``numba_impl`` -- @njit loop kernels (default when numba imports)
* ``numpy_impl`` -- vectorized pure-numpy fallback

Select with the ``ICEPINN_BACKEND`` environment variable ("numba" or
"numpy"), read once at import; ``set_backend()`` overrides at runtime
(used by tests and the benchmark). Both backends are deterministic:
repeated calls with identical inputs give bit-identical outputs. Results
*across* backends agree to floating-point reassociation tolerance only.
"""

import os

from . import numpy_impl

try:
    from . import numba_impl

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None
    _HAVE_NUMBA = False

_BACKENDS = {"numpy": numpy_impl}
if _HAVE_NUMBA:
    _BACKENDS["numba"] = numba_impl

_env = os.environ.get("ICEPINN_BACKEND", "").strip().lower()
if _env:
    if _env not in ("numba", "numpy"):
        raise ValueError(f"ICEPINN_BACKEND must be 'numba' or 'numpy', got '{_env}'")
    if _env == "numba" and not _HAVE_NUMBA:
        raise ImportError("ICEPINN_BACKEND=numba but numba is not importable")
    _active = _env
else:
    _active = "numba" if _HAVE_NUMBA else "numpy"


def get_backend() -> str:
    return _active


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous one."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend '{name}' (have {sorted(_BACKENDS)})")
    previous = _active
    _active = name
    return previous


def _impl():
    return _BACKENDS[_active]


def conv2d_forward(x, w, b, pad):
    return _impl().conv2d_forward(x, w, b, pad)


def conv2d_backward(x, w, gy, pad, with_bias):
    return _impl().conv2d_backward(x, w, gy, pad, with_bias)


def maxpool2_forward(x):
    return _impl().maxpool2_forward(x)


def maxpool2_backward(gy, idx):
    return _impl().maxpool2_backward(gy, idx)


def upconv2_forward(x, w, b):
    return _impl().upconv2_forward(x, w, b)


def upconv2_backward(x, w, gy, with_bias):
    return _impl().upconv2_backward(x, w, gy, with_bias)
