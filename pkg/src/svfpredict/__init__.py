"""Predict follow-up anatomy from a baseline scan and subject attributes.

A network maps ``(x0, attributes)`` to a stationary velocity field ``v``;
the follow-up at gap ``t`` is ``x0 o exp(t v)``, with ``exp`` computed by
scaling and squaring. Interpolation kernels run in a compiled extension
when it is built (``BACKEND == "cython"``) and in numpy otherwise.
"""

from .fields import (
    DeformationField,
    Grid,
    GridMismatchError,
    LabelMap,
    ScalarImage,
    VectorField,
    compose,
    jacobian_determinant,
)
from .integrate import IntegrationAccuracyWarning, IntegrationConfig, integrate_svf, integrate_svf_grad
from .kernels import BACKEND
from .loss import LossConfig, recon_loss, smoothness_loss, total_loss
from .warp import warp_image, warp_image_grad, warp_labels

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DeformationField",
    "Grid",
    "GridMismatchError",
    "IntegrationAccuracyWarning",
    "IntegrationConfig",
    "LabelMap",
    "LossConfig",
    "ScalarImage",
    "VectorField",
    "compose",
    "integrate_svf",
    "integrate_svf_grad",
    "jacobian_determinant",
    "recon_loss",
    "smoothness_loss",
    "total_loss",
    "warp_image",
    "warp_image_grad",
    "warp_labels",
]
