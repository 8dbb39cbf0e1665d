"""Dimension-generic layers with explicit backward passes.

Arrays are ``(N, C, *spatial)``. Convolutions use 3-wide kernels with one
voxel of zero padding, and are evaluated as a matrix product over gathered
windows.
"""

from __future__ import annotations

import itertools

import numpy as np


def _offsets(D: int):
    return list(itertools.product(range(3), repeat=D))


def conv_out_shape(shape, stride: int):
    return tuple((n - 1) // stride + 1 for n in shape)


def _window(xp: np.ndarray, offset, stride: int, out_shape):
    sl = tuple(slice(o, o + stride * (m - 1) + 1, stride) for o, m in zip(offset, out_shape))
    return xp[(slice(None), slice(None)) + sl]


def conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, stride: int = 1):
    """Return ``(y, cols)``; ``cols`` is kept for the backward pass."""
    N, C = x.shape[:2]
    D = x.ndim - 2
    out_shape = conv_out_shape(x.shape[2:], stride)
    xp = np.pad(x, ((0, 0), (0, 0)) + ((1, 1),) * D)
    offs = _offsets(D)
    cols = np.empty((N, C, len(offs)) + out_shape)
    for k, o in enumerate(offs):
        cols[:, :, k] = _window(xp, o, stride, out_shape)
    cols = cols.reshape(N, C * len(offs), -1)
    Wm = W.reshape(W.shape[0], -1)
    y = np.matmul(Wm, cols) + b[None, :, None]
    return y.reshape((N, W.shape[0]) + out_shape), cols


def conv_backward(g: np.ndarray, x_shape, W: np.ndarray, cols: np.ndarray, stride: int = 1):
    """Return ``(dx, dW, db)``."""
    N, C = x_shape[:2]
    D = len(x_shape) - 2
    Cout = W.shape[0]
    out_shape = g.shape[2:]
    gm = g.reshape(N, Cout, -1)
    dW = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(W.shape)
    db = gm.sum(axis=(0, 2))
    dcols = np.matmul(W.reshape(Cout, -1).T, gm)
    offs = _offsets(D)
    dcols = dcols.reshape((N, C, len(offs)) + out_shape)
    dxp = np.zeros((N, C) + tuple(n + 2 for n in x_shape[2:]))
    for k, o in enumerate(offs):
        _window(dxp, o, stride, out_shape)[...] += dcols[:, :, k]
    core = (slice(None), slice(None)) + tuple(slice(1, -1) for _ in range(D))
    return dxp[core], dW, db


def leaky_forward(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_backward(g: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, g, slope * g)


def upsample_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour x2 along every spatial axis."""
    for ax in range(2, x.ndim):
        x = np.repeat(x, 2, axis=ax)
    return x


def upsample_backward(g: np.ndarray) -> np.ndarray:
    N, C = g.shape[:2]
    shape = [N, C]
    for n in g.shape[2:]:
        shape += [n // 2, 2]
    return g.reshape(shape).sum(axis=tuple(range(3, 2 * g.ndim - 2 + 1, 2)))
