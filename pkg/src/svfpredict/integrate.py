"""Scaling-and-squaring integration of stationary velocity fields."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .fields import (
    DeformationField,
    VectorField,
    _compose_arrays,
    _compose_backward,
    check_same_grid,
)

#: largest initial step (voxels) before accuracy is considered degraded
MAX_INITIAL_STEP = 0.5


class IntegrationAccuracyWarning(UserWarning):
    """The first scaling-and-squaring step exceeds half a voxel."""


@dataclass(frozen=True)
class IntegrationConfig:
    steps: int = 7
    time: float = 1.0

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not np.isfinite(self.time) or self.time < 0:
            raise ValueError(f"time must be finite and non-negative, got {self.time}")

    def at(self, time: float) -> "IntegrationConfig":
        return IntegrationConfig(self.steps, float(time))


def scaling_squaring(v: np.ndarray, t: float, steps: int, identity: np.ndarray) -> list[np.ndarray]:
    """Return the displacement after every squaring, ``[u0, u1, ..., uK]``.

    Array-level entry point shared by the typed API and the trainer.
    """
    scale = t / 2.0**steps
    u = v * scale
    step = float(np.sqrt(np.max(np.sum(u * u, axis=0))))
    if step > MAX_INITIAL_STEP:
        warnings.warn(
            f"initial scaling-and-squaring step is {step:.3f} voxels (> {MAX_INITIAL_STEP}); "
            f"increase steps beyond {steps} for accurate integration",
            IntegrationAccuracyWarning,
            stacklevel=3,
        )
    history = [u]
    for _ in range(steps):
        u = _compose_arrays(u, u, identity)
        history.append(u)
    return history


def scaling_squaring_backward(history: list[np.ndarray], t: float, grad: np.ndarray,
                              identity: np.ndarray) -> np.ndarray:
    """Reverse the recursion: gradient w.r.t. ``v`` given gradient w.r.t. ``u_K``."""
    steps = len(history) - 1
    g = grad
    for k in range(steps - 1, -1, -1):
        g_outer, g_inner = _compose_backward(history[k], history[k], identity, g)
        g = g_outer + g_inner
    return g * (t / 2.0**steps)


def integrate_svf(v: VectorField, cfg: IntegrationConfig = IntegrationConfig()) -> DeformationField:
    """phi = exp(t v) by ``cfg.steps`` rounds of self-composition."""
    if cfg.time == 0 or not np.any(v.values):
        return DeformationField.identity(v.grid)
    u = scaling_squaring(v.values, cfg.time, cfg.steps, v.grid.identity())[-1]
    return DeformationField(VectorField(u, v.grid))


def integrate_svf_grad(v: VectorField, cfg: IntegrationConfig, upstream: VectorField) -> VectorField:
    """dL/dv given ``upstream`` = dL/du for the displacement of ``integrate_svf(v, cfg)``."""
    check_same_grid(v, upstream)
    identity = v.grid.identity()
    if cfg.time == 0:
        return VectorField.zeros(v.grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationAccuracyWarning)
        history = scaling_squaring(v.values, cfg.time, cfg.steps, identity)
    g = scaling_squaring_backward(history, cfg.time, upstream.values, identity)
    return VectorField(g, v.grid)
