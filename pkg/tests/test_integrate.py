import warnings

import numpy as np
import pytest

from svfpredict import (
    Grid,
    GridMismatchError,
    IntegrationAccuracyWarning,
    IntegrationConfig,
    VectorField,
    compose,
    integrate_svf,
    integrate_svf_grad,
    jacobian_determinant,
)

from helpers import directional_fd, interior, rel_err, smooth_field


def test_config_validation():
    with pytest.raises(ValueError):
        IntegrationConfig(steps=0)
    with pytest.raises(ValueError):
        IntegrationConfig(time=-1.0)
    assert IntegrationConfig().steps == 7
    assert IntegrationConfig(5, 1.0).at(2.5) == IntegrationConfig(5, 2.5)


def test_zero_velocity_is_identity(rng):
    g = Grid((9, 10))
    phi = integrate_svf(VectorField.zeros(g), IntegrationConfig(7, 3.0))
    assert np.all(phi.displacement.values == 0)


def test_zero_time_is_identity(rng):
    g = Grid((9, 10))
    v = VectorField(smooth_field(g.dims, rng, 3.0), g)
    assert np.all(integrate_svf(v, IntegrationConfig(7, 0.0)).displacement.values == 0)


@pytest.mark.parametrize("dims", [(16, 16), (10, 10, 10)])
def test_constant_translation(dims):
    c = np.array([0.7, -0.4, 0.3][:len(dims)])
    v = VectorField(np.broadcast_to(c.reshape((-1,) + (1,) * len(dims)), (len(dims),) + dims).copy())
    u = integrate_svf(v, IntegrationConfig(7, 1.0)).displacement.values
    # clamping only affects samples within one voxel of the upper/lower edge
    core = interior(u, 2)
    assert np.max(np.abs(core - c.reshape((-1,) + (1,) * len(dims)))) <= 1e-10


def test_large_initial_step_warns(rng):
    g = Grid((16, 16))
    v = VectorField(smooth_field(g.dims, rng, 5.0), g)
    with pytest.warns(IntegrationAccuracyWarning):
        integrate_svf(v, IntegrationConfig(2, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        integrate_svf(v, IntegrationConfig(7, 1.0))


def test_positive_jacobian_regime(rng):
    for dims in ((32, 32), (16, 16, 16)):
        g = Grid(dims)
        v = VectorField(smooth_field(dims, rng, 2.0), g)
        assert jacobian_determinant(integrate_svf(v, IntegrationConfig(7, 1.0))).values.min() > 0


def test_self_convergence_small_field(rng):
    # at 0.05 voxel the K=7 vs K=10 gap is interpolation-limited far below 1e-5
    g = Grid((32, 32))
    v = VectorField(smooth_field(g.dims, rng, 0.05), g)
    a = integrate_svf(v, IntegrationConfig(7, 1.0)).displacement.values
    b = integrate_svf(v, IntegrationConfig(10, 1.0)).displacement.values
    assert np.max(np.abs(a - b)) <= 1e-5


@pytest.mark.xfail(strict=True, reason="K=7 vs K=10 differ by ~1e-4 at 0.5 voxel under linear interpolation")
def test_self_convergence_half_voxel(rng):
    g = Grid((32, 32))
    v = VectorField(smooth_field(g.dims, rng, 0.5), g)
    a = integrate_svf(v, IntegrationConfig(7, 1.0)).displacement.values
    b = integrate_svf(v, IntegrationConfig(10, 1.0)).displacement.values
    assert np.max(np.abs(a - b)) <= 1e-5


def test_grad_zero_upstream(rng):
    g = Grid((8, 8))
    v = VectorField(smooth_field(g.dims, rng, 1.0), g)
    out = integrate_svf_grad(v, IntegrationConfig(7, 1.0), VectorField.zeros(g))
    assert np.all(out.values == 0)


def test_grad_grid_mismatch(rng):
    v = VectorField(np.zeros((2, 8, 8)))
    with pytest.raises(GridMismatchError):
        integrate_svf_grad(v, IntegrationConfig(), VectorField(np.zeros((2, 8, 9))))


def test_grad_single_step_fd(rng):
    """K=1: every entry of dL/dv against central differences, L = <w, u>."""
    g = Grid((6, 6))
    v = smooth_field(g.dims, rng, 0.3, sigma=1.0) + rng.uniform(-0.05, 0.05, (2, 6, 6))
    w = rng.normal(size=v.shape)
    cfg = IntegrationConfig(1, 1.0)

    def L(vv):
        return float(np.sum(w * integrate_svf(VectorField(vv, g), cfg).displacement.values))

    grad = integrate_svf_grad(VectorField(v, g), cfg, VectorField(w, g)).values
    fd = np.zeros_like(v)
    for idx in np.ndindex(v.shape):
        e = np.zeros_like(v)
        e[idx] = 1.0
        fd[idx] = directional_fd(L, v, e, 1e-6)
    assert np.max(np.abs(grad - fd)) <= 1e-6 * np.max(np.abs(fd))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("t", [1.0, 2.5])
def test_grad_directional_fd(seed, t):
    rng = np.random.default_rng(seed)
    g = Grid((16, 16))
    v = smooth_field(g.dims, rng, 0.8)
    w = rng.normal(size=v.shape)
    dv = smooth_field(g.dims, rng, 1.0, sigma=2.0)
    cfg = IntegrationConfig(7, t)

    def L(vv):
        u = integrate_svf(VectorField(vv, g), cfg).displacement.values
        return float(np.sum(w * u))

    grad = integrate_svf_grad(VectorField(v, g), cfg, VectorField(w, g)).values
    assert rel_err(np.sum(grad * dv), directional_fd(L, v, dv)) <= 1e-5


def test_grad_3d_directional(rng):
    g = Grid((8, 8, 8))
    v = smooth_field(g.dims, rng, 0.8, sigma=2.0)
    w = rng.normal(size=v.shape)
    dv = rng.normal(size=v.shape)
    cfg = IntegrationConfig(4, 1.0)

    def L(vv):
        return float(np.sum(w * integrate_svf(VectorField(vv, g), cfg).displacement.values))

    grad = integrate_svf_grad(VectorField(v, g), cfg, VectorField(w, g)).values
    assert rel_err(np.sum(grad * dv), directional_fd(L, v, dv)) <= 1e-5


def test_inverse_consistency_small_field(rng):
    """Well below the 2-voxel regime the round trip is accurate to 1e-3."""
    g = Grid((32, 32))
    v = VectorField(smooth_field(g.dims, rng, 0.2), g)
    fwd = integrate_svf(v, IntegrationConfig(7, 1.0))
    back = integrate_svf(VectorField(-v.values, g), IntegrationConfig(7, 1.0))
    u = compose(fwd, back).displacement.values
    assert np.max(np.abs(interior(u, 2))) <= 1e-3


def test_semigroup_small_field(rng):
    g = Grid((32, 32))
    v = VectorField(smooth_field(g.dims, rng, 0.2), g)
    whole = integrate_svf(v, IntegrationConfig(7, 1.0)).displacement.values
    parts = compose(integrate_svf(v, IntegrationConfig(7, 0.4)), integrate_svf(v, IntegrationConfig(7, 0.6)))
    assert np.max(np.abs(interior(whole - parts.displacement.values, 2))) <= 1e-3
