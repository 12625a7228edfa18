import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from fractions import Fraction

from twobubble.ground_state import (AccuracyError, C_N, LambdaW_profile, Lambda2W_profile, W_field, W_profile,
                                    c_tilde_residual, closed_form_constants, constants_compute, energy,
                                    ground_state_residual, lambda_generator, quadrature_audit, sobolev_check)
from twobubble.radial_core import ConfigError, build_grid

# scipy.integrate.quad of the radial integrands, computed independently and frozen
ORACLE_13 = dict(C_N=66279.39441865371, W_mass=246800998.38811108, C1=155356144.27625814,
                 E_W=13361960303.356321, C_tilde=40.37912826929305)


def test_constants_match_quadrature_oracle(consts):
    for k, v in ORACLE_13.items():
        assert getattr(consts, k) == pytest.approx(v, rel=1e-13), k
    assert consts.C2 == pytest.approx(-4.5 * ORACLE_13["C1"], rel=1e-14)
    assert consts.blowup_exponent == Fraction(2)


def test_c_tilde_identity(consts):
    assert c_tilde_residual(consts) < 1e-14
    assert c_tilde_residual(consts, consts.C_tilde * 1.01) > 1e-3


@pytest.mark.parametrize("N", [13, 14, 16, 20])
def test_c_tilde_identity_other_dimensions(N):
    c = closed_form_constants(N)
    assert c_tilde_residual(c) < 1e-14
    assert c.blowup_exponent == Fraction(2, N - 12)


def test_low_dimensions_rejected():
    with pytest.raises(ConfigError):
        closed_form_constants(12)


def test_quadrature_audit(grid):
    for a in quadrature_audit(13, grid):
        assert a.rel_error < 1e-8, a


def test_constants_compute_raises_on_coarse_grid():
    with pytest.raises(AccuracyError):
        constants_compute(13, build_grid(n_nodes=64), tol=1e-12)


def test_ground_state_residual_and_order(grid, coarse):
    fine = ground_state_residual(grid)
    rough = ground_state_residual(coarse)
    assert fine < 1e-5
    assert np.log2(rough / fine) > 3.5


def test_energy_identity(grid, consts):
    W = W_field(grid)
    assert energy(W) == pytest.approx(consts.E_W, rel=1e-8)
    kin = grid.norm(grid.lap @ W.values) ** 2
    assert energy(W) == pytest.approx(2 / 13 * kin, rel=1e-8)


def test_lambda_profiles_against_grid_derivative(grid):
    r = grid.r
    W = W_profile(r)
    LW = lambda_generator(2.0, W_field(grid)).values.real  # (N/2 - 2) + r d/dr
    m = r < 50
    assert np.max(np.abs(LW - LambdaW_profile(r))[m]) < 1e-8 * C_N(13)
    LLW = 4.5 * LambdaW_profile(r) + r * (grid.ddr @ LambdaW_profile(r))
    assert np.max(np.abs(LLW - Lambda2W_profile(r))[m]) < 1e-8 * C_N(13)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.05, 20.0), x=st.floats(0.0, 100.0))
def test_scaling_of_profiles(lam, x):
    k = 4.5
    assert W_profile(x * lam, 13, lam) == pytest.approx(lam ** -k * W_profile(x), rel=1e-13)
    assert LambdaW_profile(x * lam, 13, lam) == pytest.approx(lam ** -k * LambdaW_profile(x), rel=1e-12, abs=1e-300)


@settings(max_examples=10, deadline=None)
@given(lam=st.floats(0.2, 5.0))
def test_energy_is_scale_invariant(grid, consts, lam):
    gd = grid.dilated(1 / lam)  # nodes r * lam resolve W_lam as well as the base grid resolves W
    assert energy(W_field(gd, lam)) == pytest.approx(consts.E_W, rel=1e-8)


def test_W_is_sobolev_extremal(grid):
    rep = sobolev_check(grid, samples=32, seed=0)
    assert rep["family_max"] <= rep["W_ratio"] * (1 + 1e-8)


def test_W_field_rejects_bad_scale(grid):
    with pytest.raises(ConfigError):
        W_field(grid, 0.0)
