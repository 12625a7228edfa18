import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma

from twobubble.radial_core import (ConfigError, Grading, RadialField, build_grid, differential_apply,
                                   grid_for_scale, inner, integrate, sphere_area, stencil_coefficients)


def test_sphere_area_small_dims():
    assert sphere_area(2) == pytest.approx(2 * np.pi)
    assert sphere_area(3) == pytest.approx(4 * np.pi)
    assert sphere_area(13) == pytest.approx(2 * np.pi ** 6.5 / gamma(6.5), rel=1e-14)


def test_stencil_exact_on_polynomials():
    c1, c2, c0 = stencil_coefficients(6)
    x = np.arange(1, 7)
    for deg in range(1, 12):
        # d/dx x^deg at 0 is 1 only for deg = 1
        d1 = np.sum(c1 * (x ** deg - (-x) ** deg))
        d2 = c0 * (0.0 ** deg) + np.sum(c2 * (x ** deg + (-x) ** deg))
        assert d1 == pytest.approx(1.0 if deg == 1 else 0.0, abs=1e-9)
        assert d2 == pytest.approx(2.0 if deg == 2 else 0.0, abs=1e-8)


def test_gaussian_moments(grid):
    # int exp(-r^2) r^{2k} dx = pi^{N/2} Gamma(N/2 + k) / Gamma(N/2)
    for k in range(3):
        exact = np.pi ** 6.5 * gamma(6.5 + k) / gamma(6.5)
        assert grid.integrate(np.exp(-grid.r ** 2) * grid.r ** (2 * k)) == pytest.approx(exact, rel=1e-12)


def test_laplacian_of_gaussian(grid):
    r, N = grid.r, grid.N
    u = np.exp(-r ** 2)
    exact = (4 * r ** 2 - 2 * N) * u
    assert np.max(np.abs(grid.lap @ u - exact)) < 1e-9 * np.max(np.abs(exact))


def test_bilaplacian_self_adjoint(grid, rng):
    u = np.exp(-(grid.r / 2) ** 2) * (1 + rng.standard_normal() * grid.r ** 2)
    v = np.exp(-(grid.r / 3) ** 2)
    assert grid.inner(u, grid.bilap @ v) == pytest.approx(grid.inner(grid.bilap @ u, v), rel=1e-9)
    assert grid.inner(u, grid.bilap @ u) > 0


def test_dilated_grid_is_exactly_covariant(grid):
    lam = 0.3
    gd = grid.dilated(lam)
    np.testing.assert_allclose(gd.r, grid.r / lam, rtol=1e-14)
    u = np.exp(-grid.r ** 2)
    ud = np.exp(-(lam * gd.r) ** 2)
    np.testing.assert_allclose(gd.lap @ ud, lam ** 2 * (grid.lap @ u), rtol=1e-9, atol=1e-12)


def test_interpolation_reproduces_smooth_function(grid):
    r = np.linspace(0.0, 20.0, 301)
    u = np.exp(-grid.r ** 2 / 8)
    assert np.max(np.abs(grid.interpolate(u, r) - np.exp(-r ** 2 / 8))) < 1e-9
    assert np.all(grid.interpolate(u, np.array([250.0, 1e4])) == 0)


def test_grid_for_scale_resolves_small_bubbles():
    g = grid_for_scale(1e-4)
    assert g.grading.stretch > Grading().stretch
    assert np.sum(g.r < 1e-4) > 50


@pytest.mark.parametrize("kw", [dict(N=12), dict(N=13.5), dict(n_nodes=10), dict(r_max=-1.0), dict(r_max=np.inf)])
def test_build_grid_rejects(kw):
    with pytest.raises(ConfigError):
        build_grid(**kw)


def test_field_arithmetic_and_errors(grid):
    f = RadialField(grid, np.exp(-grid.r ** 2).astype(complex))
    assert integrate(f) == pytest.approx(np.pi ** 6.5, rel=1e-12)
    assert inner(f, 2 * f) == pytest.approx(2 * f.norm() ** 2)
    with pytest.raises(ValueError):
        RadialField(grid, np.zeros(3))
    with pytest.raises(FloatingPointError):
        RadialField(grid, np.full(grid.n, np.nan))
    with pytest.raises(ConfigError):
        differential_apply("6-trilaplacian", f)
    other = build_grid(n_nodes=256)
    with pytest.raises(ValueError):
        inner(f, RadialField(other, np.zeros(256)))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.3, 5.0), b=st.floats(0.3, 5.0))
def test_inner_product_symmetric_and_cauchy_schwarz(grid, a, b):
    u = np.exp(-(grid.r / a) ** 2)
    v = (1 + grid.r ** 2) ** (-b) * (1 + 1j)
    assert grid.inner(u, v) == pytest.approx(grid.inner(v, u), rel=1e-13)
    assert abs(grid.inner(u, v)) <= grid.norm(u) * grid.norm(v) * (1 + 1e-13)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.5, 4.0), lam=st.floats(0.05, 3.0))
def test_energy_norm_dilation_covariance(grid, a, lam):
    # the same samples read on nodes r / lam: Laplacian gains lam^2, volume lam^{-N}
    gd = grid.dilated(lam)
    u = np.exp(-(grid.r / a) ** 2)
    assert gd.energy_norm(u) == pytest.approx(lam ** (2 - grid.N / 2) * grid.energy_norm(u), rel=1e-9)
    assert gd.norm(u) == pytest.approx(lam ** (-grid.N / 2) * grid.norm(u), rel=1e-12)
