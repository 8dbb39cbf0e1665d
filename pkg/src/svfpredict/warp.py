"""The spatial warp ``x o phi`` for images and label maps."""

from __future__ import annotations

import numpy as np

from . import kernels
from .fields import DeformationField, LabelMap, ScalarImage, VectorField, check_same_grid


def warp_array(x: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return kernels.sample_linear(x[None], coords)[0]


def warp_array_backward(x: np.ndarray, coords: np.ndarray, grad: np.ndarray):
    gx, gc = kernels.sample_linear_backward(x[None], coords, grad[None])
    return gx[0], gc


def warp_image(x: ScalarImage, phi: DeformationField) -> ScalarImage:
    """Multilinear resampling of ``x`` at ``p + u(p)``, clamped to the grid."""
    check_same_grid(x, phi)
    return ScalarImage(warp_array(x.values, phi.coordinates()), x.grid)


def warp_image_grad(x: ScalarImage, phi: DeformationField, upstream: ScalarImage):
    """Return ``(dL/dx, dL/du)`` for ``upstream`` = dL/d(warp_image(x, phi)).

    Samples clamped on an axis contribute no displacement gradient along it.
    """
    check_same_grid(x, phi, upstream)
    gx, gu = warp_array_backward(x.values, phi.coordinates(), upstream.values)
    return ScalarImage(gx, x.grid), VectorField(gu, x.grid)


def warp_labels(labels: LabelMap, phi: DeformationField) -> LabelMap:
    """Nearest-neighbour label propagation; never introduces new labels."""
    check_same_grid(labels, phi)
    out = kernels.sample_nearest(labels.values, phi.coordinates())
    return LabelMap(out, labels.grid, labels.structure_names)
