"""Ground state W(r) = C_N (1 + r^2)^{-(N-4)/2}, the scaling group, the energy and derived constants.

All constants are stored from closed forms in extended precision (mpmath);
quadrature on the grid is only a cross-check.  Integrals of powers of W are
of the form int_0^R (1 + r^2)^{-a} r^{N-1} dr = B(N/2, a - N/2) I_x(N/2, a - N/2) / 2
with x = R^2 / (1 + R^2), so the truncated-domain value is also closed form.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from fractions import Fraction

import mpmath as mp
import numpy as np

from .nonlinearity import F_eval
from .radial_core import ConfigError, RadialField, RadialGrid

mp.mp.dps = 40


class AccuracyError(RuntimeError):
    pass


def C_N_exact(N: int) -> mp.mpf:
    return mp.mpf(N * (N - 4) * (N * N - 4)) ** (mp.mpf(N - 4) / 8)


def C_N(N: int) -> float:
    return float(C_N_exact(N))


def W_profile(r, N: int = 13, lam: float = 1.0):
    r = np.asarray(r, dtype=float)
    return lam ** (-(N - 4) / 2) * C_N(N) * (1.0 + (r / lam) ** 2) ** (-(N - 4) / 2)


def LambdaW_profile(r, N: int = 13, lam: float = 1.0):
    """(Lambda W)_lambda with Lambda = (N-4)/2 + r d/dr."""
    x = np.asarray(r, dtype=float) / lam
    k = (N - 4) / 2
    return lam ** (-k) * C_N(N) * k * (1.0 - x * x) * (1.0 + x * x) ** (-k - 1)


def Lambda2W_profile(r, N: int = 13, lam: float = 1.0):
    """(Lambda Lambda W)_lambda."""
    x = np.asarray(r, dtype=float) / lam
    k = (N - 4) / 2
    x2 = x * x
    phi = (1.0 - x2) * (1.0 + x2) ** (-k - 1)
    xphi = -2 * x2 * (1.0 + x2) ** (-k - 2) * ((1.0 + x2) + (k + 1) * (1.0 - x2))
    return lam ** (-k) * C_N(N) * k * (k * phi + xphi)


def W_field(grid: RadialGrid, lam: float = 1.0) -> RadialField:
    if not lam > 0:
        raise ConfigError(f"lambda={lam!r}: scale must be positive")
    return RadialField(grid, W_profile(grid.r, grid.N, lam).astype(complex))


def lambda_generator(s: float, f: RadialField) -> RadialField:
    """Lambda_s f = (N/2 - s) f + r f'."""
    g = f.grid
    return RadialField(g, (g.N / 2 - s) * f.values + g.r * (g.ddr @ f.values))


def scale_field(u: RadialField, lam: float) -> RadialField:
    """u_lambda(r) = lambda^{-(N-4)/2} u(r / lambda) by interpolation on the grid."""
    return RadialField(u.grid, u.grid.rescale(u.values, lam))


# -- energy -----------------------------------------------------------------

def kinetic(grid: RadialGrid, u) -> float:
    return float(np.dot(grid.weights, np.abs(grid.lap @ u) ** 2))


def potential(grid: RadialGrid, u) -> float:
    return float(np.dot(grid.weights, F_eval(u, grid.N)))


def energy_values(grid: RadialGrid, u) -> float:
    return 0.5 * kinetic(grid, u) - potential(grid, u)


def tail_fraction(grid: RadialGrid, u, frac: float = 0.5) -> float:
    """Share of the energy densities carried by r > frac * r_max."""
    dens = grid.weights * (np.abs(grid.lap @ u) ** 2 + np.abs(u) ** (2 * grid.N / (grid.N - 4)))
    tot = dens.sum()
    return float(dens[grid.r > frac * grid.r_max].sum() / tot) if tot > 0 else 0.0


def energy(u: RadialField, N: int | None = None) -> float:
    g = u.grid
    if N is not None and N != g.N:
        raise ConfigError(f"N={N} does not match grid dimension {g.N}")
    if tail_fraction(g, u.values) > 1e-6:
        warnings.warn("energy: more than 1e-6 of the energy density sits in the outer half of the grid",
                      RuntimeWarning, stacklevel=2)
    return energy_values(g, u.values)


# -- closed forms -------------------------------------------------------------

def radial_beta(N: int, a, R=None) -> mp.mpf:
    """int_0^R (1 + r^2)^{-a} r^{N-1} dr (R = None means infinity)."""
    a = mp.mpf(a)
    p, q = mp.mpf(N) / 2, a - mp.mpf(N) / 2
    if R is None:
        return mp.beta(p, q) / 2
    x = mp.mpf(R) ** 2 / (1 + mp.mpf(R) ** 2)
    return mp.betainc(p, q, 0, x) / 2


def sphere_area_exact(N: int) -> mp.mpf:
    return 2 * mp.pi ** (mp.mpf(N) / 2) / mp.gamma(mp.mpf(N) / 2)


def W_power_integral(N: int, power, R=None) -> mp.mpf:
    """int_{|x| < R} W^power dx in closed form."""
    power = mp.mpf(power)
    return (C_N_exact(N) ** power * sphere_area_exact(N)
            * radial_beta(N, power * mp.mpf(N - 4) / 2, R))


@dataclass(frozen=True)
class Constants:
    N: int
    C_N: float
    W_mass: float
    C1: float
    C2: float
    E_W: float
    C_tilde: float
    blowup_exponent: Fraction

    def as_dict(self) -> dict:
        d = asdict(self)
        d["blowup_exponent"] = str(self.blowup_exponent)
        return d

    @property
    def W_norm2(self) -> float:
        return self.W_mass


def closed_form_constants(N: int) -> Constants:
    if N < 13:
        raise ConfigError(f"N={N}: the construction requires N >= 13")
    mass = W_power_integral(N, 2)
    C1 = W_power_integral(N, mp.mpf(N + 4) / (N - 4))
    C2 = mp.mpf(4 - N) / 2 * C1
    crit = W_power_integral(N, mp.mpf(2 * N) / (N - 4))
    E_W = 2 * crit / N
    if N == 12:
        raise ConfigError("N = 12 has no power-law rate")
    C_tilde = (4 * mass / ((N - 12) * C1)) ** (mp.mpf(2) / (N - 12))
    return Constants(N, float(C_N_exact(N)), float(mass), float(C1), float(C2), float(E_W),
                     float(C_tilde), Fraction(2, N - 12))


def c_tilde_residual(c: Constants, C_tilde: float | None = None) -> float:
    """Relative residual of 2 C~/(N-12) = C1 C~^{(N-10)/2} / (2 ||W||^2)."""
    Ct = mp.mpf(c.C_tilde if C_tilde is None else C_tilde)
    lhs = 2 * Ct / (c.N - 12)
    rhs = mp.mpf(c.C1) * Ct ** (mp.mpf(c.N - 10) / 2) / (2 * mp.mpf(c.W_mass))
    return float(abs(lhs - rhs) / abs(lhs))


@dataclass(frozen=True)
class QuadratureAudit:
    name: str
    quadrature: float
    closed_truncated: float
    closed_full: float
    rel_error: float
    tail_fraction: float


def quadrature_audit(N: int, grid: RadialGrid) -> list[QuadratureAudit]:
    """Grid quadrature of every constant against the closed form on [0, r_max]."""
    r, R = grid.r, grid.r_max
    W = W_profile(r, N)
    LW = LambdaW_profile(r, N)
    p = 8.0 / (N - 4)
    out = []

    def add(name, quad, trunc, full):
        trunc, full = float(trunc), float(full)
        out.append(QuadratureAudit(name, quad, trunc, full, abs(quad - trunc) / abs(trunc),
                                   abs(full - trunc) / abs(full)))

    add("W_mass", grid.integrate(W * W), W_power_integral(N, 2, R), W_power_integral(N, 2))
    pc1 = mp.mpf(N + 4) / (N - 4)
    add("C1", grid.integrate(W ** (1 + p)), W_power_integral(N, pc1, R), W_power_integral(N, pc1))
    # C2 = (N+4)/(N-4) int W^p Lambda W; its closed form is ((4-N)/2) C1
    trunc_c2 = _c2_truncated(N, R)
    add("C2", (N + 4) / (N - 4) * grid.integrate(W ** p * LW), trunc_c2,
        mp.mpf(4 - N) / 2 * W_power_integral(N, pc1))
    pcr = mp.mpf(2 * N) / (N - 4)
    # the kinetic tail beyond R decays like R^{-9}, far below double precision
    add("E_W", energy_values(grid, W), 2 * W_power_integral(N, pcr, R) / N,
        2 * W_power_integral(N, pcr) / N)
    add("kinetic_W", kinetic(grid, W), W_power_integral(N, pcr), W_power_integral(N, pcr))
    return out


def _c2_truncated(N: int, R) -> mp.mpf:
    # Lambda W = C_N k (1 - r^2)(1 + r^2)^{-k-1} = C_N k (2 (1+r^2)^{-k-1} - (1+r^2)^{-k})
    k = mp.mpf(N - 4) / 2
    CN = C_N_exact(N)
    pw = mp.mpf(8) / (N - 4)
    S = sphere_area_exact(N)
    a0 = pw * k  # W^p ~ (1+r^2)^{-a0}
    val = CN ** (pw + 1) * k * S * (2 * radial_beta(N, a0 + k + 1, R) - radial_beta(N, a0 + k, R))
    return mp.mpf(N + 4) / (N - 4) * val


def constants_compute(N: int, grid: RadialGrid, tol: float = 1e-6) -> Constants:
    if grid.N != N:
        raise ConfigError(f"N={N} does not match grid dimension {grid.N}")
    c = closed_form_constants(N)
    for a in quadrature_audit(N, grid):
        if a.rel_error > tol:
            raise AccuracyError(f"{a.name}: quadrature {a.quadrature:.12e} vs closed form "
                                f"{a.closed_truncated:.12e} (rel {a.rel_error:.2e} > {tol})")
    return c


# -- Sobolev ratio --------------------------------------------------------------

def sobolev_ratio(grid: RadialGrid, u) -> float:
    N = grid.N
    pc = 2 * N / (N - 4)
    num = np.dot(grid.weights, np.abs(u) ** pc) ** (1 / pc)
    return float(num / np.sqrt(kinetic(grid, u)))


def sobolev_check(grid: RadialGrid, samples: int = 32, seed: int = 0) -> dict:
    """Largest Sobolev quotient over a random family of smooth radial profiles, and W's own."""
    rng = np.random.default_rng(seed)
    r = grid.r
    N = grid.N
    best = 0.0
    family = []
    for _ in range(samples):
        kind = rng.integers(3)
        sc = np.exp(rng.uniform(np.log(0.3), np.log(3.0)))
        x = r / sc
        if kind == 0:
            a = rng.uniform((N - 4) / 2 + 0.2, N)
            u = (1 + x * x) ** (-a)
        elif kind == 1:
            u = np.exp(-x * x) * (1 + rng.uniform(-0.5, 0.5) * x * x)
        else:
            u = W_profile(r, N) * (1 + rng.uniform(-0.3, 0.3) * np.exp(-x * x))
        family.append(u)
        best = max(best, sobolev_ratio(grid, u))
    w_ratio = sobolev_ratio(grid, W_profile(r, N))
    return {"max_ratio": max(best, w_ratio), "W_ratio": w_ratio, "family_max": best,
            "samples": samples}


def ground_state_residual(grid: RadialGrid, r_lo: float = 0.01, r_hi: float = 50.0) -> float:
    """max |Delta^2 W - W^{(N+4)/(N-4)}| / max W^{(N+4)/(N-4)} over r in [r_lo, r_hi]."""
    N = grid.N
    W = W_profile(grid.r, N)
    rhs = W ** ((N + 4) / (N - 4))
    m = (grid.r >= r_lo) & (grid.r <= r_hi)
    return float(np.max(np.abs(grid.bilap @ W - rhs)[m]) / np.max(rhs[m]))
