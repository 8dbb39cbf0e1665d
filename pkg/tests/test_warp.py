import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svfpredict import (
    DeformationField,
    Grid,
    GridMismatchError,
    LabelMap,
    ScalarImage,
    VectorField,
    warp_image,
    warp_image_grad,
    warp_labels,
)

from helpers import directional_fd, loop_nearest, loop_sample, rel_err, smooth_image

NAMES = {1: "a", 2: "b", 3: "c"}


def _phi(u, grid=None):
    return DeformationField(VectorField(u, grid))


def test_identity_warp_exact(rng):
    x = ScalarImage(rng.normal(size=(9, 11)))
    assert np.array_equal(warp_image(x, DeformationField.identity(x.grid)).values, x.values)


def test_ramp_translation():
    x = ScalarImage(np.indices((10, 8))[0].astype(float) * 0.3)
    u = np.zeros((2, 10, 8))
    u[0] = 1.0
    out = warp_image(x, _phi(u)).values
    np.testing.assert_allclose(out[:-1], x.values[1:], atol=1e-14)


def test_loop_oracle(rng):
    x = rng.normal(size=(8, 8))
    u = rng.uniform(-1.5, 1.5, (2, 8, 8))
    out = warp_image(ScalarImage(x), _phi(u)).values
    X = Grid((8, 8)).identity()
    for i in range(8):
        for j in range(8):
            assert abs(out[i, j] - loop_sample(x, X[:, i, j] + u[:, i, j])) <= 1e-12


def test_grid_mismatch():
    x = ScalarImage(np.zeros((4, 4)))
    with pytest.raises(GridMismatchError):
        warp_image(x, DeformationField.identity(Grid((4, 5))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(6, 7), (4, 5, 3)]))
def test_intensity_bounds(seed, dims):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=dims)
    u = rng.normal(scale=3.0, size=(len(dims),) + dims)
    out = warp_image(ScalarImage(x), _phi(u)).values
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


class TestWarpGrad:
    def test_zero_upstream(self, rng):
        x = ScalarImage(rng.normal(size=(6, 6)))
        gx, gu = warp_image_grad(x, _phi(rng.normal(size=(2, 6, 6))), ScalarImage(np.zeros((6, 6))))
        assert np.all(gx.values == 0) and np.all(gu.values == 0)

    def test_identity_fd_interior(self, rng):
        x = smooth_image((12, 12), rng)
        w = rng.normal(size=(12, 12))
        g = Grid((12, 12))
        _, gu = warp_image_grad(ScalarImage(x), DeformationField.identity(g), ScalarImage(w))

        def L(u):
            return float(np.sum(w * warp_image(ScalarImage(x), _phi(u)).values))

        u0 = np.zeros((2, 12, 12))
        for c in range(2):
            for i in range(1, 11):
                for j in range(1, 11):
                    e = np.zeros_like(u0)
                    e[c, i, j] = 1.0
                    fd = directional_fd(L, u0, e, 1e-6)
                    assert abs(gu.values[c, i, j] - fd) <= 1e-6 * max(abs(fd), 1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_directional(self, seed):
        rng = np.random.default_rng(seed)
        dims = (9, 10)
        x = smooth_image(dims, rng)
        xt = smooth_image(dims, rng)
        u = rng.uniform(-0.8, 0.8, (2,) + dims)
        du = rng.normal(size=u.shape)
        dx = rng.normal(size=dims)

        def L(uu, xx=x):
            r = warp_image(ScalarImage(xx), _phi(uu)).values - xt
            return 0.5 * float(np.sum(r * r))

        r = warp_image(ScalarImage(x), _phi(u)).values - xt
        gx, gu = warp_image_grad(ScalarImage(x), _phi(u), ScalarImage(r))
        assert rel_err(np.sum(gu.values * du), directional_fd(L, u, du)) <= 1e-5
        fdx = directional_fd(lambda xx: L(u, xx), x, dx)
        assert rel_err(np.sum(gx.values * dx), fdx) <= 1e-5

    def test_clamped_samples_have_zero_axis_gradient(self, rng):
        x = ScalarImage(rng.normal(size=(6, 6)))
        u = np.zeros((2, 6, 6))
        u[0] = 10.0  # every sample clamped along axis 0
        _, gu = warp_image_grad(x, _phi(u), ScalarImage(np.ones((6, 6))))
        assert np.all(gu.values[0] == 0)


class TestWarpLabels:
    def test_identity(self, rng):
        L = LabelMap(rng.integers(0, 4, (7, 9)), structure_names=NAMES)
        assert np.array_equal(warp_labels(L, DeformationField.identity(L.grid)).values, L.values)

    def test_unit_translation(self, rng):
        L = LabelMap(rng.integers(0, 4, (7, 9)), structure_names=NAMES)
        u = np.zeros((2, 7, 9))
        u[1] = 1.0
        out = warp_labels(L, _phi(u)).values
        assert np.array_equal(out[:, :-1], L.values[:, 1:])

    def test_loop_oracle(self, rng):
        lab = rng.integers(0, 4, (8, 8))
        u = rng.uniform(-1.2, 1.2, (2, 8, 8))
        u[:, ::2, ::2] = 0.5  # exact midpoints round up
        out = warp_labels(LabelMap(lab, structure_names=NAMES), _phi(u)).values
        X = Grid((8, 8)).identity()
        ref = np.array([[loop_nearest(lab, X[:, i, j] + u[:, i, j]) for j in range(8)] for i in range(8)])
        assert np.array_equal(out, ref)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_never_invents_labels(self, seed):
        rng = np.random.default_rng(seed)
        lab = rng.choice([0, 2, 3], size=(6, 6))
        out = warp_labels(LabelMap(lab, structure_names=NAMES), _phi(rng.normal(scale=2, size=(2, 6, 6))))
        assert set(np.unique(out.values)) <= set(np.unique(lab))
        assert out.values.dtype.kind == "i"
