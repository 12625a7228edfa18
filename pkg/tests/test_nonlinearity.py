import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twobubble.nonlinearity import (INEQUALITY_IDS, F_eval, evaluate_inequality, exponent, f_eval,
                                    fprime_apply, fprime_norm, taylor_inequality_check, taylor_remainder)
from twobubble.radial_core import ConfigError

mags = st.floats(1e-3, 1e3)
phases = st.floats(0, 2 * np.pi)


def polar(m, a):
    return m * np.exp(1j * a)


def _mp_derivative(z, z1, N=13):
    # central difference of f along z1 in 50-digit arithmetic
    mp.mp.dps = 50
    p = mp.mpf(8) / (N - 4)
    f = lambda w: abs(w) ** p * w
    zz, dd = mp.mpc(z), mp.mpc(z1)
    h = mp.mpf("1e-20")
    return complex((f(zz + h * dd) - f(zz - h * dd)) / (2 * h))


def test_exponent_and_potential():
    assert exponent(13) == pytest.approx(8 / 9)
    assert F_eval(2.0, 13) == pytest.approx(9 / 26 * 2.0 ** (26 / 9))
    assert f_eval(0.0) == 0


@settings(max_examples=40, deadline=None)
@given(m=mags, a=phases, m1=mags, a1=phases)
def test_fprime_matches_high_precision_difference(m, a, m1, a1):
    z, z1 = polar(m, a), polar(m1, a1)
    got = fprime_apply(z, z1)
    assert abs(got - _mp_derivative(z, z1)) <= 1e-12 * abs(fprime_norm(z)) * abs(z1)


@settings(max_examples=40, deadline=None)
@given(m=mags, a=phases, a1=phases)
def test_fprime_norm_is_operator_norm(m, a, a1):
    z = polar(m, a)
    # |f'(z) e^{i a1}| is maximised along z itself, with value (1 + p)|z|^p
    assert abs(fprime_apply(z, np.exp(1j * a1))) <= fprime_norm(z) * (1 + 1e-12)
    assert abs(fprime_apply(z, z / abs(z))) == pytest.approx(float(fprime_norm(z)), rel=1e-12)


def test_fprime_at_zero():
    assert fprime_apply(0.0, 1 + 1j) == 0


@settings(max_examples=40, deadline=None)
@given(m=mags, a=phases, a1=phases, t=st.floats(0.11, 0.5))
def test_remainders_are_homogeneous(m, a, a1, t):
    z1 = polar(m, a)
    z2 = polar(t * m, a1)
    for kind in ("f", "F1", "F2"):
        direct = taylor_remainder(kind, np.array([z1]), np.array([z2]))[0]
        small = taylor_remainder(kind, np.array([z1 * 1e6]), np.array([z2 * 1e6]))[0]
        # homogeneity: f remainder scales with degree 1 + p, F remainders with 2N/(N-4)
        deg = 1 + exponent(13) if kind == "f" else 26 / 9
        assert abs(small) == pytest.approx(abs(direct) * 1e6 ** deg, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(m=mags, a=phases, a1=phases, t=st.floats(1e-3, 0.09))
def test_quadrature_branch_against_second_order_taylor(m, a, a1, t):
    # for tiny z2 the f remainder is ~ 1/2 f''(z1)[z2, z2] = O(|z1|^{p-1} |z2|^2)
    z1, z2 = polar(m, a), polar(t * m, a1)
    r = taylor_remainder("f", np.array([z1]), np.array([z2]))[0]
    assert abs(r) <= 2.0 * m ** (exponent(13) - 1) * (t * m) ** 2


@pytest.mark.parametrize("ident", INEQUALITY_IDS)
def test_inequality_constants_finite_and_positive(ident):
    rep = taylor_inequality_check(ident, 20000, seed=3)
    assert np.isfinite(rep.fitted_constant) and rep.fitted_constant > 0
    assert rep.n_samples == 20000
    lhs, rhs = evaluate_inequality(ident, [rep.worst_case[0]], [rep.worst_case[1]])
    assert lhs[0] / rhs[0] == pytest.approx(rep.fitted_constant, rel=1e-12)


def test_inequality_seed_reproducible():
    a = taylor_inequality_check("F_taylor2", 5000, seed=7)
    b = taylor_inequality_check("F_taylor2", 5000, seed=7)
    assert a == b


def test_inequality_rejects_unknown_and_low_dimension():
    with pytest.raises(ConfigError):
        taylor_inequality_check("nope", 10)
    with pytest.raises(ConfigError):
        taylor_inequality_check("F_taylor1", 10, N=12)


def _mp_remainders(z1, z2, N=13):
    mp.mp.dps = 60
    p = mp.mpf(8) / (N - 4)
    a, b = mp.mpc(z1), mp.mpc(z2)
    f = lambda w: abs(w) ** p * w
    F = lambda w: (mp.mpf(N - 4) / (2 * N)) * abs(w) ** (2 * mp.mpf(N) / (N - 4))

    def fp(w, d):
        return abs(w) ** p * d + p * abs(w) ** (p - 2) * mp.re(mp.conj(w) * d) * w
    rf = f(a + b) - f(a) - fp(a, b)
    r1 = F(a + b) - F(a) - mp.re(mp.conj(f(a)) * b)
    r2 = r1 - mp.re(mp.conj(fp(a, b)) * b) / 2
    return complex(rf), float(r1), float(r2)


@settings(max_examples=30, deadline=None)
@given(m=mags, a=phases, a1=phases, t=st.floats(1e-4, 0.099))
def test_quadrature_branch_matches_extended_precision(m, a, a1, t):
    z1, z2 = polar(m, a), polar(t * m, a1)
    exact = _mp_remainders(z1, z2)
    for kind, ref in zip(("f", "F1", "F2"), exact):
        got = taylor_remainder(kind, np.array([z1]), np.array([z2]))[0]
        assert abs(got - ref) <= 1e-9 * abs(ref) + 1e-300
