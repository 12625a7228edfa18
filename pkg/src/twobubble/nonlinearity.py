"""The critical nonlinearity f(z) = |z|^p z, p = 8/(N-4), its potential and its real-linear derivative.

Also hosts randomized validators for the Taylor-type inequalities satisfied by
f and F.  Each validator samples (z1, z2) on a log-uniform magnitude scale and
reports the largest observed LHS/RHS ratio (the fitted constant).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .radial_core import ConfigError


def exponent(N: int) -> float:
    return 8.0 / (N - 4)


def f_eval(z, N: int = 13):
    z = np.asarray(z, dtype=complex)
    return np.abs(z) ** exponent(N) * z


def F_eval(z, N: int = 13):
    return (N - 4) / (2 * N) * np.abs(np.asarray(z)) ** (2 * N / (N - 4))


def fprime_apply(z, z1, N: int = 13):
    """f'(z) z1 = |z|^p (z1 + p z Re(z1 / z)), with f'(0) = 0."""
    z = np.asarray(z, dtype=complex)
    z1 = np.asarray(z1, dtype=complex)
    p = exponent(N)
    a = np.abs(z)
    # |z|^{p-2} Re(conj(z) z1) z avoids dividing by z; it vanishes with z since p > 0
    safe = np.where(a > 0, a, 1.0)
    proj = np.where(a > 0, safe ** (p - 2) * np.real(np.conj(z) * z1), 0.0)
    return a ** p * z1 + p * proj * z


def fprime_norm(z, N: int = 13):
    """Operator norm of the real-linear map z1 -> f'(z) z1, i.e. (1 + p)|z|^p."""
    return (1 + exponent(N)) * np.abs(np.asarray(z)) ** exponent(N)


# -- inequality validators ----------------------------------------------------

def _lhs_rhs(ident: str, z1, z2, N: int):
    k = (N - 12) / (N - 4)
    f, F, fp, fpn = f_eval, F_eval, fprime_apply, fprime_norm
    a1 = np.abs(z1)
    if ident == "fprime_difference":
        # operator-norm difference of the two real-linear maps, evaluated on the basis {1, i}
        d1 = fp(z1 + z2, 1.0, N) - fp(z1, 1.0, N)
        di = fp(z1 + z2, 1j, N) - fp(z1, 1j, N)
        return _op_norm(d1, di), fpn(z2, N)
    if ident == "fprime_lipschitz":
        d1 = fp(z1 + z2, 1.0, N) - fp(z1, 1.0, N)
        di = fp(z1 + z2, 1j, N) - fp(z1, 1j, N)
        return _op_norm(d1, di), a1 ** (-k) * np.abs(z2)
    if ident == "f_difference":
        return np.abs(f(z1 + z2, N) - f(z1, N)), fpn(z1, N) * np.abs(z2) + np.abs(f(z2, N))
    if ident == "f_taylor_f":
        return np.abs(taylor_remainder("f", z1, z2, N)), np.abs(f(z2, N))
    if ident == "f_taylor_weighted":
        return np.abs(taylor_remainder("f", z1, z2, N)), a1 ** (-k) * np.abs(z2) ** 2
    if ident == "F_taylor1":
        return np.abs(taylor_remainder("F1", z1, z2, N)), fpn(z1, N) * np.abs(z2) ** 2 + F(z2, N)
    if ident == "F_taylor2":
        return np.abs(taylor_remainder("F2", z1, z2, N)), F(z2, N)
    raise ConfigError(f"unknown inequality id {ident!r}; expected one of {INEQUALITY_IDS}")


_GL_T, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_T = 0.5 * (_GL_T + 1.0)
_GL_W = 0.5 * _GL_W


def taylor_remainder(kind: str, z1, z2, N: int = 13):
    """Taylor remainders of f and F at z1 in direction z2.

    kind 'f':  f(z1+z2) - f(z1) - f'(z1) z2
    kind 'F1': F(z1+z2) - F(z1) - Re(conj(f(z1)) z2)
    kind 'F2': the 'F1' remainder minus 1/2 Re(conj(f'(z1) z2) z2)

    Direct differences cancel catastrophically when |z2| << |z1|, so there
    the integral form of the remainder is evaluated by Gauss-Legendre
    quadrature on the (then smooth) path z1 + t z2.
    """
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    z1, z2 = np.broadcast_arrays(z1, z2)
    if kind == "f":
        out = f_eval(z1 + z2, N) - f_eval(z1, N) - fprime_apply(z1, z2, N)
    elif kind == "F1":
        out = F_eval(z1 + z2, N) - F_eval(z1, N) - np.real(np.conj(f_eval(z1, N)) * z2)
    elif kind == "F2":
        out = (F_eval(z1 + z2, N) - F_eval(z1, N) - np.real(np.conj(f_eval(z1, N)) * z2)
               - 0.5 * np.real(np.conj(fprime_apply(z1, z2, N)) * z2))
    else:
        raise ValueError(kind)
    small = np.abs(z2) < 0.1 * np.abs(z1)
    if np.any(small):
        a, b = z1[small], z2[small]
        acc = np.zeros(a.shape, dtype=out.dtype)
        for t, wt in zip(_GL_T, _GL_W):
            zt = a + t * b
            if kind == "f":
                acc += wt * (fprime_apply(zt, b, N) - fprime_apply(a, b, N))
            elif kind == "F1":
                acc += wt * np.real(np.conj(f_eval(zt, N) - f_eval(a, N)) * b)
            else:
                d = fprime_apply(zt, b, N) - fprime_apply(a, b, N)
                acc += wt * (1 - t) * np.real(np.conj(d) * b)
        out = np.array(out, copy=True)
        out[small] = acc
    return out


def _op_norm(d1, di):
    """Largest singular value of the real 2x2 matrix with columns d1, di (as R^2 vectors)."""
    a, c = d1.real, d1.imag
    b, d = di.real, di.imag
    s = a * a + b * b + c * c + d * d
    det = a * d - b * c
    return np.sqrt(0.5 * (s + np.sqrt(np.maximum(s * s - 4 * det * det, 0.0))))


INEQUALITY_IDS = ("fprime_difference", "fprime_lipschitz", "f_difference", "f_taylor_f",
                  "f_taylor_weighted", "F_taylor1", "F_taylor2")
# validators whose right-hand side carries a negative power of |z1|
_NEEDS_NONZERO_Z1 = {"fprime_lipschitz", "f_taylor_weighted"}


@dataclass(frozen=True)
class InequalityReport:
    inequality_id: str
    n_samples: int
    fitted_constant: float
    worst_case: tuple


def sample_pairs(n_samples: int, rng: np.random.Generator, lo: float = 1e-4, hi: float = 1e4):
    mags = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(2, n_samples)))
    phases = rng.uniform(0.0, 2 * np.pi, size=(2, n_samples))
    z = mags * np.exp(1j * phases)
    return z[0], z[1]


def taylor_inequality_check(inequality_id: str, n_samples: int = 100_000, seed: int = 0,
                  N: int = 13) -> InequalityReport:
    if inequality_id not in INEQUALITY_IDS:
        raise ConfigError(f"unknown inequality id {inequality_id!r}; expected one of {INEQUALITY_IDS}")
    if N < 13:
        raise ConfigError(f"N={N}: the inequalities are stated for N >= 13")
    rng = np.random.default_rng(seed)
    z1, z2 = sample_pairs(n_samples, rng)
    if inequality_id in _NEEDS_NONZERO_Z1:
        keep = z1 != 0
        z1, z2 = z1[keep], z2[keep]
    lhs, rhs = _lhs_rhs(inequality_id, z1, z2, N)
    ok = rhs > 0
    if np.any((rhs <= 0) & (lhs > 0)):
        raise FloatingPointError(f"{inequality_id}: zero right-hand side with positive left-hand side")
    ratio = np.where(ok, lhs / np.where(ok, rhs, 1.0), 0.0)
    i = int(np.argmax(ratio))
    return InequalityReport(inequality_id, int(len(z1)), float(ratio[i]),
                            (complex(z1[i]), complex(z2[i])))


def evaluate_inequality(inequality_id: str, z1, z2, N: int = 13):
    """(LHS, RHS) arrays for explicit sample points."""
    return _lhs_rhs(inequality_id, np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex), N)
