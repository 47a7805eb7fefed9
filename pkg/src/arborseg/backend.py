"""Selection between the numba and pure-numpy kernel backends.

The environment variable ARBORSEG_BACKEND picks the implementation:

  ARBORSEG_BACKEND=numba   require the @njit kernels (error if numba missing)
  ARBORSEG_BACKEND=numpy   force the vectorized numpy fallbacks
  unset                    numba when importable, numpy otherwise

set_backend() switches at runtime; benchmarks/bench_backends.py uses it to
time one against the other.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

try:
    from . import _kernels_numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _kernels_numba = None
    HAS_NUMBA = False

_IMPLS = {"numpy": _kernels_numpy}
if HAS_NUMBA:
    _IMPLS["numba"] = _kernels_numba

_active = None


def set_backend(name: str) -> None:
    global _active
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}, expected 'numpy' or 'numba'")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("backend 'numba' requested but numba is not importable")
    _active = name


def active_backend() -> str:
    return _active


def _impl():
    return _IMPLS[_active]


def gather3d(x, w, stride):
    return _impl().gather3d(x, w, stride)


def scatter3d(y, w, stride, out_spatial):
    return _impl().scatter3d(y, w, stride, out_spatial)


def wgrad3d(x, y, kshape, stride):
    return _impl().wgrad3d(x, y, kshape, stride)


def minpool3(x):
    return _impl().minpool3(x)


def maxpool3(x):
    return _impl().maxpool3(x)


def pool3_backward(g, arg, shape):
    return _impl().pool3_backward(g, arg, shape)


_env = os.environ.get("ARBORSEG_BACKEND", "").strip().lower()
if _env:
    set_backend(_env)
else:
    set_backend("numba" if HAS_NUMBA else "numpy")
