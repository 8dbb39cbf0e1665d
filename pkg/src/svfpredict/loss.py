"""Negative log-posterior: Gaussian image term plus gradient-smoothness prior."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fields import ScalarImage, VectorField, check_same_grid, diff_axis, diff_axis_adjoint, spatial_gradient
from .integrate import IntegrationAccuracyWarning, IntegrationConfig, scaling_squaring, scaling_squaring_backward
from .warp import warp_array, warp_array_backward

REGULARIZE_DISPLACEMENT = "displacement"
REGULARIZE_VELOCITY = "velocity"


@dataclass(frozen=True)
class LossConfig:
    """Noise variance ``sigma2`` and prior weight ``gamma``.

    ``regularize`` selects which field the smoothness prior acts on: the
    displacement of the integrated deformation (default) or the velocity.
    """

    sigma2: float = 0.01
    gamma: float = 0.01
    regularize: str = REGULARIZE_DISPLACEMENT

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.regularize not in (REGULARIZE_DISPLACEMENT, REGULARIZE_VELOCITY):
            raise ValueError(f"unknown regularization target {self.regularize!r}")


def recon_loss(x_t: ScalarImage, x0_warped: ScalarImage, cfg: LossConfig) -> float:
    check_same_grid(x_t, x0_warped)
    r = x_t.values - x0_warped.values
    return float(np.sum(r * r)) / (2.0 * cfg.sigma2)


def smoothness_loss(u: VectorField, cfg: LossConfig) -> float:
    J = spatial_gradient(u)
    return cfg.gamma * float(np.sum(J * J))


def _smoothness_value_grad(u: np.ndarray, gamma: float):
    D = u.shape[0]
    value = 0.0
    grad = np.zeros_like(u)
    for i in range(D):
        for j in range(D):
            d = diff_axis(u[i], j)
            value += float(np.sum(d * d))
            grad[i] += diff_axis_adjoint(d, j)
    return gamma * value, 2.0 * gamma * grad


def loss_and_grad(x_t: np.ndarray, x0: np.ndarray, v: np.ndarray, t: float,
                  cfg: LossConfig, steps: int, identity: np.ndarray, need_grad: bool = True):
    """Array-level total loss; returns ``(value, grad_v, parts)``.

    ``parts`` holds the reconstruction and smoothness terms and the warped image.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationAccuracyWarning)
        history = scaling_squaring(v, t, steps, identity)
    u = history[-1]
    coords = identity + u
    warped = warp_array(x0, coords)
    r = warped - x_t
    recon = float(np.sum(r * r)) / (2.0 * cfg.sigma2)
    reg_field = u if cfg.regularize == REGULARIZE_DISPLACEMENT else v
    smooth, g_smooth = _smoothness_value_grad(reg_field, cfg.gamma)
    parts = {"recon": recon, "smooth": smooth, "warped": warped, "displacement": u}
    if not need_grad:
        return recon + smooth, None, parts
    _, g_u = warp_array_backward(x0, coords, r / cfg.sigma2)
    if cfg.regularize == REGULARIZE_DISPLACEMENT:
        g_u = g_u + g_smooth
    g_v = scaling_squaring_backward(history, t, g_u, identity)
    if cfg.regularize == REGULARIZE_VELOCITY:
        g_v = g_v + g_smooth
    return recon + smooth, g_v, parts


def total_loss(x_t: ScalarImage, x0: ScalarImage, v: VectorField, t: float,
               cfg: LossConfig = LossConfig(), icfg: IntegrationConfig = IntegrationConfig()):
    """``(1/2 sigma2)||x_t - x0 o exp(t v)||^2 + gamma ||grad u||^2`` and its v-gradient."""
    check_same_grid(x_t, x0, v)
    if t < 0:
        raise ValueError("time must be non-negative")
    value, g, _ = loss_and_grad(x_t.values, x0.values, v.values, float(t), cfg, icfg.steps, v.grid.identity())
    return value, VectorField(g, v.grid)
