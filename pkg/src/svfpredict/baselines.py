"""Comparative predictors: identity, mean training velocity, registration oracle."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .fields import DeformationField, Grid, ScalarImage, VectorField, check_same_grid
from .integrate import IntegrationAccuracyWarning, IntegrationConfig, integrate_svf
from .loss import LossConfig, loss_and_grad
from .warp import warp_image

log = logging.getLogger(__name__)


class RegistrationWarning(UserWarning):
    """Line search failed to decrease the loss; best-so-far field returned."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Descent settings for pairwise registration.

    ``method`` is ``"lbfgs"`` (limited-memory quasi-Newton directions) or
    ``"gd"`` (steepest descent); both use Armijo backtracking, so the loss
    sequence never increases.
    """

    max_iterations: int = 300
    method: str = "lbfgs"
    history: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    rel_tol: float = 1e-6
    patience: int = 10
    multiresolution: bool = False

    def __post_init__(self):
        if self.method not in ("lbfgs", "gd"):
            raise ValueError(f"unknown descent method {self.method!r}")
        if self.max_iterations < 0 or self.patience < 1:
            raise ValueError("max_iterations must be >= 0 and patience >= 1")


@dataclass
class RegistrationResult:
    v: VectorField
    losses: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    line_search_failed: bool = False

    @property
    def loss(self) -> float:
        return self.losses[-1]


def _descend(f, v0: np.ndarray, opt: OptimizerConfig):
    """Minimize ``f(v) -> (value, grad)`` from ``v0``; returns ``(v, losses, iters, converged, failed)``."""
    v = v0.copy()
    value, g = f(v)
    losses = [value]
    s_hist, y_hist = [], []
    step0 = None
    failed = converged = False
    it = 0
    for it in range(1, opt.max_iterations + 1):
        gnorm = float(np.sqrt(np.sum(g * g)))
        if gnorm == 0.0:
            converged = True
            it -= 1
            break
        if opt.method == "lbfgs" and s_hist:
            q = g.copy()
            alphas = []
            for s, y in zip(reversed(s_hist), reversed(y_hist)):
                a = np.sum(s * q) / np.sum(y * s)
                alphas.append(a)
                q -= a * y
            q *= np.sum(s_hist[-1] * y_hist[-1]) / np.sum(y_hist[-1] * y_hist[-1])
            for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
                q += (a - np.sum(y * q) / np.sum(y * s)) * s
            d = -q
            step = 1.0
        else:
            d = -g
            # first step moves the largest voxel by half a voxel
            step = step0 if step0 is not None else 0.5 / float(np.max(np.abs(g)))
        slope = float(np.sum(g * d))
        if slope >= 0:  # not a descent direction; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -gnorm**2
            step = 0.5 / float(np.max(np.abs(g)))
        accepted = False
        for _ in range(opt.max_backtracks):
            v_new = v + step * d
            new_value, g_new = f(v_new)
            if np.isfinite(new_value) and new_value <= value + opt.armijo * step * slope:
                accepted = True
                break
            step *= opt.backtrack
        if not accepted:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            failed = True
            break
        s, y = v_new - v, g_new - g
        if np.sum(s * y) > 1e-12 * np.sqrt(np.sum(s * s) * np.sum(y * y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > opt.history:
                del s_hist[0], y_hist[0]
        if opt.method == "gd":
            step0 = step * 2.0
        v, value, g = v_new, new_value, g_new
        losses.append(value)
        if len(losses) > opt.patience:
            ref = losses[-1 - opt.patience]
            if ref - value <= opt.rel_tol * abs(ref):
                converged = True
                break
    return v, losses, it, converged, failed


def _downsample(x: np.ndarray, dims) -> np.ndarray:
    smooth = ndimage.gaussian_filter(x, 1.0, mode="nearest")
    coords = Grid(dims).identity() * np.array([(n - 1) / (m - 1) for n, m in zip(x.shape, dims)]).reshape(
        (-1,) + (1,) * len(dims))
    return kernels.sample_linear(smooth[None], coords)[0]


def resample_velocity(v: np.ndarray, dims) -> np.ndarray:
    """Linearly resample a velocity field to ``dims``, rescaling to the new voxel units."""
    src = v.shape[1:]
    ratio = np.array([(m - 1) / (n - 1) for n, m in zip(dims, src)])
    coords = Grid(dims).identity() * ratio.reshape((-1,) + (1,) * len(dims))
    return kernels.sample_linear(v, coords) / ratio.reshape((-1,) + (1,) * len(dims))


def oracle_register(x0: ScalarImage, x_t: ScalarImage, cfg: LossConfig = LossConfig(),
                    icfg: IntegrationConfig = IntegrationConfig(), opt: OptimizerConfig = OptimizerConfig(),
                    t: float = 1.0, v_init: VectorField | None = None) -> RegistrationResult:
    """Velocity ``v*`` minimizing the total loss for the pair, starting from zero.

    Sees the follow-up scan, so it bounds what any predictor can reach.
    """
    check_same_grid(x0, x_t)
    grid = x0.grid
    v = np.zeros((grid.ndim,) + grid.dims) if v_init is None else v_init.values.copy()
    if opt.multiresolution and all(n % 2 == 0 and n >= 16 for n in grid.dims):
        coarse = tuple(n // 2 for n in grid.dims)
        cx0 = ScalarImage(_downsample(x0.values, coarse))
        cxt = ScalarImage(_downsample(x_t.values, coarse))
        sub = OptimizerConfig(**{**asdict(opt), "multiresolution": False})
        res = oracle_register(cx0, cxt, cfg, icfg, sub, t, VectorField(resample_velocity(v, coarse)))
        v = resample_velocity(res.v.values, grid.dims)

    identity = grid.identity()

    def f(vv):
        value, g, _ = loss_and_grad(x_t.values, x0.values, vv, t, cfg, icfg.steps, identity)
        return value, g

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationAccuracyWarning)
        v, losses, iters, converged, failed = _descend(f, v, opt)
    if failed:
        warnings.warn("line search could not decrease the loss; returning best-so-far velocity",
                      RegistrationWarning, stacklevel=2)
    return RegistrationResult(VectorField(v, grid), losses, iters, converged, failed)


def identity_baseline(x0: ScalarImage):
    """No anatomical change: ``(x0, Id)``."""
    return x0, DeformationField.identity(x0.grid)


def mean_velocity_baseline(train: list, cfg: LossConfig = LossConfig(),
                           icfg: IntegrationConfig = IntegrationConfig(),
                           opt: OptimizerConfig = OptimizerConfig(), threads: int = 1) -> VectorField:
    """Voxelwise mean of per-pair oracle velocities, each normalized to unit time.

    Predict with ``predict_with_velocity(x0, v_mean, t)``.
    """
    if not train:
        raise ValueError("mean-velocity baseline needs at least one training pair")
    dims = {s.x0.grid.dims for s in train}
    if len(dims) != 1:
        raise ValueError("all training pairs must share one grid")

    def one(s):
        return oracle_register(s.x0, s.xt, cfg, icfg, opt, t=s.t).v.values

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fields = list(pool.map(one, train))
    else:
        fields = [one(s) for s in train]
    total = np.zeros_like(fields[0])
    for v in fields:  # fixed summation order
        total += v
    return VectorField(total / len(fields), train[0].x0.grid)


def predict_with_velocity(x0: ScalarImage, v: VectorField, t: float,
                          icfg: IntegrationConfig = IntegrationConfig()):
    """``(x0 o exp(t v), exp(t v))``."""
    phi = integrate_svf(v, icfg.at(t))
    return warp_image(x0, phi), phi
