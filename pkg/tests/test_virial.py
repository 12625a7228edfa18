from math import prod

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twobubble import virial as V
from twobubble.radial_core import ConfigError


@pytest.fixture(scope="module")
def q():
    return V.build_q(0.01, 10.0, strict=False)


@pytest.mark.parametrize("eps", [1e-2, 5e-3, 0.3])
@pytest.mark.parametrize("N", [13, 16])
def test_tail_coefficients_solve_matching_system(N, eps):
    # the six powers must reproduce 1/2 s^2 and its first five derivatives at s = 1
    pw = [2 - eps, 1, 0, 2 - N, 4 - N, 6 - N]
    A = np.array([[prod(a - j for j in range(k)) for a in pw] for k in range(6)], float)
    c = np.linalg.solve(A, [0.5, 1, 1, 0, 0, 0])
    np.testing.assert_allclose(V.tail_coefficients(N, eps), c, rtol=1e-12)
    assert abs(V.tail_coefficients(N, eps).sum() - 0.5) < 1e-12


def test_smoothstep_boundary_jets():
    x = np.array([0.0, 1.0, 2.0, 2.5])
    j = V.chi_jet(x)
    np.testing.assert_allclose(j[0], [1, 1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(j[1:6, 1:3], 0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(1.01, 1.99))
def test_chi_jet_derivatives_match_differences(x):
    h = 1e-5
    j = V.chi_jet(np.array([x - h, x, x + h]))
    for k in range(4):
        assert (j[k, 2] - j[k, 0]) / (2 * h) == pytest.approx(j[k + 1, 1], rel=1e-5, abs=1e-5)


def test_laplacian_jet_on_polynomial():
    r = np.array([0.7, 1.3, 4.0])
    N = 13
    f = np.array([r ** 4, 4 * r ** 3, 12 * r ** 2, 24 * r, 24 + 0 * r, 0 * r])
    d = V.laplacian_jet(f, r, N)
    np.testing.assert_allclose(d[0], 4 * (N + 2) * r ** 2)
    np.testing.assert_allclose(d[1], 8 * (N + 2) * r)


def test_q_shape(q):
    r = np.array([0.5, 5.0, 10.0])
    np.testing.assert_array_equal(q(r), 0.5 * r ** 2)
    far = q(np.array([q.R_tilde, 2 * q.R_tilde]))
    assert far[0] == far[1]


@settings(max_examples=25, deadline=None)
@given(s=st.floats(1.001, 50.0))
def test_q_jet_derivatives_match_differences(q, s):
    r = s * q.R
    h = 1e-6 * r
    j = q.jet(np.array([r - h, r, r + h]), 4)
    for k in range(3):
        assert (j[k, 2] - j[k, 0]) / (2 * h) == pytest.approx(j[k + 1, 1], rel=1e-5, abs=1e-8 * abs(j[k, 1]) / r)


def test_audit_records_junctions_and_known_failures(q):
    aud = q.audit
    for k in ("junction_R", "junction_R0", "p1_quadratic_inside", "p2_constant_outside",
              "p3_gradient", "p3_laplacian", "coefficient_sum"):
        assert aud[k]["pass"], k
    assert aud["junction_R"]["value"] < 1e-8


def test_build_q_strict_names_violations():
    with pytest.raises(V.CutoffError, match="p4_convexity"):
        V.build_q(0.1, 1.0, max_halvings=0)


@pytest.mark.parametrize("c,R", [(0.0, 1.0), (1.5, 1.0), (0.1, -2.0)])
def test_build_q_rejects(c, R):
    with pytest.raises(ConfigError):
        V.build_q(c, R)


def test_apply_virial_rejects_kind(q, grid):
    with pytest.raises(ConfigError):
        V.apply_virial("B", 1.0, grid.r, q, grid)


@pytest.mark.parametrize("lam", [1.0, 0.5, 0.1])
def test_integration_by_parts_identity(q, grid, lam):
    h = np.exp(-(grid.r / (3 * lam)) ** 2) * (1 + 0.3j * grid.r / lam)
    assert V.virial_audit(lam, h, q, grid)["relative_difference"] < 1e-4


def test_A_on_bubble_is_scaling_generator(q, grid):
    # inside r <= R lambda, A(lambda) W_lambda = lambda^{-4} (Lambda W)_lambda exactly
    assert V.W_virial_check(0.1, q, grid) < 1e-10


@settings(max_examples=8, deadline=None)
@given(lam=st.floats(0.05, 2.0), seed=st.integers(0, 1000))
def test_scaling_covariance(q, grid, lam, seed):
    assert V.scaling_check(lam, q, grid, seed)["max"] < 1e-8


@settings(max_examples=8, deadline=None)
@given(lam=st.floats(0.05, 2.0), seed=st.integers(0, 1000))
def test_A0_antisymmetric(q, grid, lam, seed):
    assert V.antisymmetry_check(lam, q, grid, pairs=5, seed=seed)["max_relative"] < 1e-8


def test_corrected_phase_real_input_unchanged(q, grid):
    # <g, i A0 g> vanishes for real g because A0 is real and antisymmetric
    g = np.exp(-grid.r ** 2).astype(complex)
    assert V.corrected_phase(0.4, 1.0, g, q, grid, 1.0) == pytest.approx(0.4, abs=1e-12)
