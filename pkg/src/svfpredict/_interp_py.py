"""Pure-numpy multilinear sampling kernels.

Reference implementation of the compiled kernels in ``_interp_c``; used when
the extension is unavailable or ``SVFPREDICT_PURE_PYTHON`` is set.

Conventions shared by both backends:

* ``src`` has shape ``(C, *dims)`` and ``coords`` has shape ``(D, *out_dims)``
  holding voxel-index coordinates into ``dims``.
* Coordinates are clamped to ``[0, n - 1]`` per axis before interpolation.
* The coordinate gradient is zero along an axis where the sample was clamped.
  Exactly on a grid line, it is the mean of the left and right derivatives
  (a clamped side contributes zero), which is what a central difference sees.
"""

from __future__ import annotations

import itertools

import numpy as np


def _axis_terms(p: np.ndarray, n: int):
    """Base index, fraction and 3-point derivative stencil along one axis."""
    pc = np.clip(p, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(pc).astype(np.intp), n - 2)
    f = pc - i0
    clamped = (p < 0.0) | (p > n - 1.0)
    on_line = (f == 0.0) & (i0 >= 1)
    edge = ((f == 0.0) & (i0 == 0)) | (f == 1.0)
    dm = np.where(~clamped & on_line, -0.5, 0.0)
    d0 = np.where(clamped | on_line, 0.0, np.where(edge, -0.5, -1.0))
    dp = np.where(clamped, 0.0, np.where(on_line | edge, 0.5, 1.0))
    return i0, f, (dm, d0, dp)


def _prepare(src: np.ndarray, coords: np.ndarray):
    dims = src.shape[1:]
    D = len(dims)
    if coords.shape[0] != D:
        raise ValueError(f"coords have {coords.shape[0]} components for a {D}-D source")
    terms = [_axis_terms(coords[a], dims[a]) for a in range(D)]
    strides = np.array([int(np.prod(dims[a + 1:])) for a in range(D)], dtype=np.intp)
    return dims, terms, strides


def sample_linear(src: np.ndarray, coords: np.ndarray) -> np.ndarray:
    dims, terms, strides = _prepare(src, coords)
    C = src.shape[0]
    flat = src.reshape(C, -1)
    out = np.zeros((C,) + coords.shape[1:])
    for corner in itertools.product((0, 1), repeat=len(dims)):
        idx = 0
        w = 1.0
        for a, bit in enumerate(corner):
            i0, f, _ = terms[a]
            idx = idx + (i0 + bit) * strides[a]
            w = w * (f if bit else 1.0 - f)
        out += w * flat[:, idx]
    return out


def sample_linear_backward(src: np.ndarray, coords: np.ndarray, grad_out: np.ndarray):
    """Adjoint of :func:`sample_linear` with respect to ``src`` and ``coords``."""
    dims, terms, strides = _prepare(src, coords)
    D = len(dims)
    C = src.shape[0]
    N = int(np.prod(dims))
    flat = src.reshape(C, -1)
    g = grad_out.reshape(C, -1)
    gsrc = np.zeros((C, N))
    for corner in itertools.product((0, 1), repeat=D):
        idx = 0
        w = 1.0
        for a, bit in enumerate(corner):
            i0, f, _ = terms[a]
            idx = idx + (i0 + bit) * strides[a]
            w = w * (f if bit else 1.0 - f)
        idx = np.ravel(idx)
        w = np.ravel(w)
        for c in range(C):
            gsrc[c] += np.bincount(idx, weights=g[c] * w, minlength=N)

    gcrd = np.zeros((D,) + coords.shape[1:])
    for a in range(D):
        others = [b for b in range(D) if b != a]
        i0a, _, stencil = terms[a]
        deriv = np.zeros((C,) + coords.shape[1:])
        for corner in itertools.product((0, 1), repeat=D - 1):
            idx = 0
            w = 1.0
            for b, bit in zip(others, corner):
                i0, f, _ = terms[b]
                idx = idx + (i0 + bit) * strides[b]
                w = w * (f if bit else 1.0 - f)
            for offset, coef in zip((-1, 0, 1), stencil):
                # clip keeps masked-out (coef == 0) gathers in range
                ia = np.clip(i0a + offset, 0, dims[a] - 1)
                deriv += (coef * w) * flat[:, idx + ia * strides[a]]
        gcrd[a] = np.sum(grad_out * deriv, axis=0)
    return gsrc.reshape(src.shape), gcrd


def sample_nearest(labels: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Nearest-neighbour lookup; ties round half-up, clamp to edge."""
    dims = labels.shape
    idx = []
    for a, n in enumerate(dims):
        i = np.floor(coords[a] + 0.5).astype(np.intp)
        idx.append(np.clip(i, 0, n - 1))
    return labels[tuple(idx)]
