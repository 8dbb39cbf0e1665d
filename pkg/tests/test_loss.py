import numpy as np
import pytest

from svfpredict import (
    DeformationField,
    Grid,
    IntegrationConfig,
    LossConfig,
    ScalarImage,
    VectorField,
    integrate_svf,
    recon_loss,
    smoothness_loss,
    total_loss,
    warp_image,
)
from svfpredict.fields import spatial_gradient

from helpers import directional_fd, rel_err, smooth_field, smooth_image


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(sigma2=0.0)
    with pytest.raises(ValueError):
        LossConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        LossConfig(regularize="both")


class TestRecon:
    def test_identical(self, rng):
        x = ScalarImage(rng.normal(size=(5, 5)))
        assert recon_loss(x, x, LossConfig()) == 0.0

    def test_single_voxel(self):
        a = np.zeros((4, 4))
        b = a.copy()
        b[2, 1] = 1.0
        assert recon_loss(ScalarImage(a), ScalarImage(b), LossConfig(sigma2=1.0)) == 0.5

    def test_loop_oracle(self, rng):
        a, b = rng.normal(size=(2, 4, 4))
        cfg = LossConfig(sigma2=0.37)
        ref = 0.0
        for i in range(4):
            for j in range(4):
                ref += (a[i, j] - b[i, j]) ** 2
        ref /= 2 * cfg.sigma2
        assert abs(recon_loss(ScalarImage(a), ScalarImage(b), cfg) - ref) <= 1e-12 * ref


class TestSmoothness:
    def test_zero_and_constant(self, rng):
        cfg = LossConfig(gamma=1.0)
        assert smoothness_loss(VectorField(np.zeros((2, 5, 5))), cfg) == 0.0
        c = np.broadcast_to(rng.normal(size=(2, 1, 1)), (2, 5, 5)).copy()
        assert smoothness_loss(VectorField(c), cfg) == 0.0

    def test_linear_field_loop_oracle(self, rng):
        A = rng.normal(size=(2, 2))
        X = Grid((7, 8)).identity()
        u = np.einsum("ij,j...->i...", A, X)
        value = smoothness_loss(VectorField(u), LossConfig(gamma=1.0))
        # linear fields are differentiated exactly by both stencils
        assert abs(value - 56 * np.sum(A * A)) <= 1e-12 * value
        J = spatial_gradient(VectorField(u))
        inner = np.sum(J[1:-1, 1:-1] ** 2)
        assert abs(inner - 30 * np.sum(A * A)) <= 1e-12 * inner

    def test_loop_oracle_random(self, rng):
        u = rng.normal(size=(2, 5, 6))
        ref = 0.0
        for c in range(2):
            for i in range(5):
                for j in range(6):
                    for ax, n, p in ((0, 5, i), (1, 6, j)):
                        def at(q):
                            idx = [i, j]
                            idx[ax] = q
                            return u[c, idx[0], idx[1]]
                        if p == 0:
                            d = at(1) - at(0)
                        elif p == n - 1:
                            d = at(n - 1) - at(n - 2)
                        else:
                            d = (at(p + 1) - at(p - 1)) / 2
                        ref += d * d
        assert abs(smoothness_loss(VectorField(u), LossConfig(gamma=0.3)) - 0.3 * ref) <= 1e-12 * ref


class TestTotal:
    def test_zero_velocity_same_images(self, rng):
        x = ScalarImage(smooth_image((12, 12), rng))
        value, g = total_loss(x, x, VectorField(np.zeros((2, 12, 12))), 1.0)
        assert value == 0.0 and np.all(g.values == 0)

    def test_gamma_zero_is_recon(self, rng):
        dims = (12, 12)
        x0, xt = ScalarImage(smooth_image(dims, rng)), ScalarImage(smooth_image(dims, rng))
        v = VectorField(smooth_field(dims, rng, 1.0))
        cfg = LossConfig(gamma=0.0)
        value, _ = total_loss(xt, x0, v, 1.7, cfg)
        ref = recon_loss(xt, warp_image(x0, integrate_svf(v, IntegrationConfig(7, 1.7))), cfg)
        assert value == pytest.approx(ref, rel=1e-14)

    @pytest.mark.parametrize("regularize", ["displacement", "velocity"])
    @pytest.mark.parametrize("seed", range(4))
    def test_directional_fd(self, regularize, seed):
        rng = np.random.default_rng(seed)
        dims = (16, 16)
        x0, xt = ScalarImage(smooth_image(dims, rng)), ScalarImage(smooth_image(dims, rng))
        v = smooth_field(dims, rng, 1.0)
        dv = smooth_field(dims, rng, 1.0, sigma=2.0)
        cfg = LossConfig(sigma2=0.05, gamma=0.1, regularize=regularize)
        icfg = IntegrationConfig(7, 1.0)
        value, g = total_loss(xt, x0, VectorField(v), 1.3, cfg, icfg)
        fd = directional_fd(lambda vv: total_loss(xt, x0, VectorField(vv), 1.3, cfg, icfg)[0], v, dv)
        assert rel_err(np.sum(g.values * dv), fd) <= 1e-5

    def test_regularizer_switch_changes_value(self, rng):
        dims = (12, 12)
        x0 = ScalarImage(smooth_image(dims, rng))
        v = VectorField(smooth_field(dims, rng, 1.5))
        a, _ = total_loss(x0, x0, v, 2.0, LossConfig(regularize="displacement"))
        b, _ = total_loss(x0, x0, v, 2.0, LossConfig(regularize="velocity"))
        assert a != b

    def test_non_negative(self, rng):
        for _ in range(5):
            dims = (10, 10)
            x0, xt = ScalarImage(smooth_image(dims, rng)), ScalarImage(smooth_image(dims, rng))
            value, _ = total_loss(xt, x0, VectorField(smooth_field(dims, rng, 2.0)), 1.0)
            assert value >= 0

    def test_negative_time_rejected(self, rng):
        x = ScalarImage(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            total_loss(x, x, VectorField(np.zeros((2, 4, 4))), -1.0)

    def test_identity_field_object(self, rng):
        # the deformation used by the loss is the one integrate_svf returns
        dims = (10, 10)
        v = VectorField(smooth_field(dims, rng, 1.0))
        phi = integrate_svf(v, IntegrationConfig(7, 1.0))
        assert isinstance(phi, DeformationField)
