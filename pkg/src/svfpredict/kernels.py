"""Backend selection for the sampling kernels.

The compiled extension is used when it imports cleanly; otherwise, or when
the environment variable ``SVFPREDICT_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the numpy implementation is used. ``BACKEND`` names
the active choice.
"""

from __future__ import annotations

import os

import numpy as np

from . import _interp_py

try:
    from . import _interp_c as _c
except ImportError:  # extension not built
    _c = None

HAVE_EXTENSION = _c is not None
_FORCE_PURE = os.environ.get("SVFPREDICT_PURE_PYTHON", "") not in ("", "0")
BACKEND = "cython" if HAVE_EXTENSION and not _FORCE_PURE else "numpy"
BACKENDS = ("cython", "numpy")


def _use_ext(backend: str | None, ndim: int) -> bool:
    backend = backend or BACKEND
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if backend == "cython" and not HAVE_EXTENSION:
        raise RuntimeError("compiled extension requested but not built")
    return backend == "cython" and ndim in (2, 3)


def _f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def sample_linear(src: np.ndarray, coords: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Multilinear sample of ``src`` (C, *dims) at ``coords`` (D, *out_dims)."""
    src, coords = _f64(src), _f64(coords)
    if _use_ext(backend, coords.shape[0]):
        fn = _c.sample_linear_2d if coords.shape[0] == 2 else _c.sample_linear_3d
        return fn(src, coords)
    return _interp_py.sample_linear(src, coords)


def sample_linear_backward(src: np.ndarray, coords: np.ndarray, grad_out: np.ndarray,
                           backend: str | None = None):
    """Return ``(grad_src, grad_coords)`` for upstream ``grad_out`` (C, *out_dims)."""
    src, coords, grad_out = _f64(src), _f64(coords), _f64(grad_out)
    if _use_ext(backend, coords.shape[0]):
        fn = _c.sample_linear_2d_backward if coords.shape[0] == 2 else _c.sample_linear_3d_backward
        return fn(src, coords, grad_out)
    return _interp_py.sample_linear_backward(src, coords, grad_out)


sample_nearest = _interp_py.sample_nearest
