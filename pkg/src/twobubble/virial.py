"""Localized virial weight q, the operators A(lambda), A0(lambda), and the corrected phase.

q is 1/2 r^2 up to r = R, continues as a slowly growing power sum
c0 s^{2-eps} + c1 s + c2 + c3 s^{2-N} + c4 s^{4-N} + c5 s^{6-N} (s = r / R) that
matches 1/2 s^2 to fifth order at s = 1, and is spliced to a constant between
R0 R and 3 R0 R by multiplying its Taylor polynomial at R0 with a C^5 cutoff.
All derivatives are evaluated from closed-form jets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
from numpy.polynomial import polynomial as P

from .ground_state import W_profile
from .radial_core import ConfigError, RadialGrid

JET = 7  # q, q', ..., q^(6)


class CutoffError(RuntimeError):
    pass


def tail_coefficients(N: int, eps: float):
    e = eps
    return np.array([
        N * (N - 2) * (N - 4) / ((e - 1) * (e - 2) * (N - e) * (N - 2 - e) * (N - 4 - e)),
        e * N * (N - 2) * (N - 4) / ((e - 1) * (N - 1) * (N - 3) * (N - 5)),
        -e * N / (2 * (e - 2) * (N - 6)),
        -e * (N - 4) / (8 * (N - e) * (N - 1)),
        e * N / (4 * (N - 2 - e) * (N - 3)),
        -e * N * (N - 2) / (8 * (N - 4 - e) * (N - 5) * (N - 6)),
    ])


def _smoothstep():
    """Degree-11 S on [0, 1]: S(0) = 0, S(1) = 1, derivatives 1..5 vanish at both ends."""
    A, b = [], []
    for k in range(6):
        for t0, val in ((0.0, 0.0), (1.0, 1.0)):
            A.append([factorial(j) / factorial(j - k) * t0 ** (j - k) if j >= k else 0.0
                      for j in range(12)])
            b.append(val if k == 0 else 0.0)
    return np.linalg.solve(np.array(A), np.array(b))


_S = _smoothstep()


def chi_jet(x, K: int = JET):
    """chi = 1 on [0, 1], 1 - S(x - 1) on [1, 2], 0 beyond; derivatives in x."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((K,) + x.shape)
    out[0, x <= 1] = 1.0
    mid = (x > 1) & (x < 2)
    c = _S.copy()
    for k in range(K):
        out[k, mid] = (1.0 if k == 0 else 0.0) - P.polyval(x[mid] - 1, c)
        c = P.polyder(c) if len(c) > 1 else np.zeros(1)
    return out


def _q0_jet(s, N, eps, coef, K=JET):
    s = np.asarray(s, dtype=float)
    out = np.zeros((K,) + s.shape)
    powers = [2 - eps, 1, 0, 2 - N, 4 - N, 6 - N]
    outer = s > 1
    so = s[outer]
    for ci, a in zip(coef, powers):
        fac = 1.0
        for k in range(K):
            out[k, outer] += ci * fac * so ** (a - k)
            fac *= a - k
    inner = ~outer
    out[0, inner] = 0.5 * s[inner] ** 2
    if K > 1:
        out[1, inner] = s[inner]
    if K > 2:
        out[2, inner] = 1.0
    return out


def laplacian_jet(jet, r, N):
    """Jet of Delta f = f'' + (N-1) f' / r from the jet of f (two orders shorter)."""
    K = jet.shape[0]
    inv = [(-1) ** m * factorial(m) / r ** (m + 1) for m in range(K)]
    out = np.zeros((K - 2,) + np.shape(r))
    for k in range(K - 2):
        out[k] = jet[k + 2] + (N - 1) * sum(comb(k, i) * jet[1 + i] * inv[k - i] for i in range(k + 1))
    return out


@dataclass(frozen=True)
class CutoffQ:
    c: float
    R: float
    epsilon: float
    R0: float
    N: int = 13
    coefficients: np.ndarray = field(default=None, repr=False)
    audit: dict = field(default=None, repr=False, compare=False)

    @property
    def R_tilde(self) -> float:
        return 3 * self.R0 * self.R

    def jet(self, r, K: int = JET):
        """(q, q', ..., q^(K-1)) at radii r."""
        r = np.asarray(r, dtype=float)
        R, R0, N, eps = self.R, self.R0, self.N, self.epsilon
        s = r / R
        out = np.zeros((K,) + s.shape)
        m1 = s <= R0
        out[:, m1] = _q0_jet(s[m1], N, eps, self.coefficients, K)
        m2 = ~m1
        if np.any(m2):
            j0 = _q0_jet(np.array([R0]), N, eps, self.coefficients, max(K, 6))[:, 0]
            taylor = np.array([0.0] + [j0[j] / factorial(j) for j in range(1, 6)])
            y = s[m2] - R0
            ch = chi_jet(y / R0, K)
            for k in range(K):
                ch[k] /= R0 ** k
            tj = np.zeros((K,) + y.shape)
            c = taylor
            for k in range(K):
                tj[k] = P.polyval(y, c)
                c = P.polyder(c) if len(c) > 1 else np.zeros(1)
            prod = np.zeros_like(tj)
            for k in range(K):
                for i in range(k + 1):
                    prod[k] += comb(k, i) * tj[i] * ch[k - i]
            prod[0] += j0[0]
            out[:, m2] = prod
        # q_R(r) = R^2 q(r / R)
        for k in range(K):
            out[k] *= R ** (2 - k)
        inner = r <= R
        out[:, inner] = 0.0
        out[0, inner] = 0.5 * r[inner] ** 2
        if K > 1:
            out[1, inner] = r[inner]
        if K > 2:
            out[2, inner] = 1.0
        return out

    def __call__(self, r):
        return self.jet(r, 1)[0]

    def derived(self, r) -> dict:
        """q_r, q_rr, Delta q, d_rr Delta q, Delta^2 q, Delta^3 q at r."""
        r = np.asarray(r, dtype=float)
        j = self.jet(r)
        d1 = laplacian_jet(j, r, self.N)
        d2 = laplacian_jet(d1, r, self.N)
        d3 = laplacian_jet(d2, r, self.N)
        return {"q": j[0], "q_r": j[1], "q_rr": j[2], "lap": d1[0], "lap_rr": d1[2],
                "bilap": d2[0], "trilap": d3[0]}


def _audit(q: CutoffQ, K_bound: float = 100.0, samples: int = 20001) -> dict:
    R, N = q.R, q.N
    r = np.concatenate([np.geomspace(1e-3 * R, q.R_tilde * 1.5, samples), [R, q.R0 * R]])
    d = q.derived(r)
    res = {}
    # junctions: one-sided jets agree
    for name, rj in (("junction_R", R), ("junction_R0", q.R0 * R)):
        lo = q.jet(np.array([rj * (1 - 1e-13)]))[:6, 0]
        hi = q.jet(np.array([rj * (1 + 1e-13)]))[:6, 0]
        scale = np.maximum(np.abs(lo), np.abs(lo[0]) * float(rj) ** -np.arange(6.0)) + 1e-300
        err = float(np.max(np.abs(lo - hi) / scale))
        res[name] = {"pass": err < 1e-8, "value": err}
    inner = r <= R
    err1 = float(np.max(np.abs(d["q"][inner] - 0.5 * r[inner] ** 2)))
    res["p1_quadratic_inside"] = {"pass": err1 == 0.0, "value": err1}
    outer = r >= q.R_tilde
    var = float(np.ptp(d["q"][outer])) if outer.any() else 0.0
    res["p2_constant_outside"] = {"pass": var == 0.0, "value": var}
    g = float(np.max(np.abs(d["q_r"]) / r))
    lap = float(np.max(np.abs(d["lap"])))
    res["p3_gradient"] = {"pass": g <= K_bound, "value": g}
    res["p3_laplacian"] = {"pass": lap <= K_bound, "value": lap}
    v4 = -d["q_rr"] - q.c
    i4 = int(np.argmax(v4))
    res["p4_convexity"] = {"pass": bool(v4[i4] <= 0), "value": float(-d["q_rr"][i4]), "where": float(r[i4])}
    v5a = (2 * d["lap_rr"] + d["bilap"]) * r ** 2 - q.c
    i5a = int(np.argmax(v5a))
    res["p5_fourth_order"] = {"pass": bool(v5a[i5a] <= 0), "value": float(v5a[i5a] + q.c), "where": float(r[i5a])}
    v5b = -d["trilap"] * r ** 4 - q.c
    i5b = int(np.argmax(v5b))
    res["p5_sixth_order"] = {"pass": bool(v5b[i5b] <= 0), "value": float(v5b[i5b] + q.c), "where": float(r[i5b])}
    res["coefficient_sum"] = {"pass": abs(q.coefficients.sum() - 0.5) < 1e-12,
                              "value": float(abs(q.coefficients.sum() - 0.5))}
    return res


def build_q(c: float, R: float, N: int = 13, strict: bool = True, eps0: float = 1e-2,
            max_halvings: int = 20) -> CutoffQ:
    """Cutoff weight for slack c and inner radius R.

    eps starts at eps0 and is halved until the sixth- and fourth-order sign
    conditions hold, with R0 = max(10 / eps, 100).  With strict=True a failure
    after the last halving raises CutoffError naming the violated properties;
    otherwise the last candidate is returned with its audit attached.
    """
    if not 0 < c < 1:
        raise ConfigError(f"c={c!r}: slack must lie in (0, 1)")
    if not R > 0:
        raise ConfigError(f"R={R!r}: inner radius must be positive")
    eps = eps0
    for _ in range(max_halvings + 1):
        q = CutoffQ(c, R, eps, max(10.0 / eps, 100.0), N, tail_coefficients(N, eps))
        aud = _audit(q)
        if all(v["pass"] for v in aud.values()):
            break
        eps /= 2
    q = CutoffQ(q.c, q.R, q.epsilon, q.R0, N, q.coefficients, aud)
    bad = {k: v for k, v in aud.items() if not v["pass"]}
    if bad and strict:
        lines = ", ".join(f"{k} (value {v['value']:.3g}" + (f" at r={v['where']:.4g})" if "where" in v else ")")
                          for k, v in bad.items())
        raise CutoffError(f"q(c={c}, R={R}) violates: {lines}")
    return q


# -- operators ------------------------------------------------------------------

def apply_virial(kind: str, lam: float, h, q: CutoffQ, grid: RadialGrid):
    """A(lambda) h or A0(lambda) h for samples h on the grid."""
    if kind == "A":
        a = (grid.N - 4) / (2 * grid.N)
    elif kind == "A0":
        a = 0.5
    else:
        raise ConfigError(f"kind {kind!r} not in {{'A', 'A0'}}")
    j = q.jet(grid.r / lam, 3)
    lap = j[2] + (grid.N - 1) * j[1] / (grid.r / lam)
    return a / lam ** 4 * lap * h + j[1] / lam ** 3 * (grid.ddr @ h)


def virial_audit(lam: float, h, q: CutoffQ, grid: RadialGrid, c0_target: float = 0.01) -> dict:
    """Both sides of the integration-by-parts identity for <A0 h, -Delta^2 h> and the margin of its upper bound."""
    if lam != 1.0:
        # h = H_lambda with H sampled on the dilated grid; the pairing scales as lambda^{-4}
        # and both energies are invariant
        gd = grid.dilated(lam)
        out = virial_audit(1.0, np.asarray(h) * lam ** ((grid.N - 4) / 2), q, gd, c0_target)
        for k in ("lhs", "rhs", "rhs_hessian", "rhs_gradient", "rhs_mass", "difference", "margin"):
            out[k] = out[k] / lam ** 4
        out["bound_pass"] = out["margin"] >= -1e-8 * out["energy"] / lam ** 4
        return out
    w, r, N = grid.weights, grid.r, grid.N
    h = np.asarray(h)
    Lh = grid.lap @ h
    A0h = apply_virial("A0", 1.0, h, q, grid)
    lhs = -float(np.real(np.dot(w, np.conj(grid.lap @ A0h) * Lh)))
    d = q.derived(r)
    hr = grid.ddr @ h
    hrr = Lh - (N - 1) / r * hr
    t1 = -2 * float(np.dot(w, d["q_rr"] * np.abs(hrr) ** 2 + d["q_r"] / r * (N - 1) / r ** 2 * np.abs(hr) ** 2))
    t2 = float(np.dot(w, np.abs(hr) ** 2 * (d["lap_rr"] + 0.5 * d["bilap"])))
    t3 = -0.25 * float(np.dot(w, np.abs(h) ** 2 * d["trilap"]))
    rhs = t1 + t2 + t3
    energy = float(np.dot(w, np.abs(Lh) ** 2))
    inner_energy = float(np.dot(w[r <= q.R], np.abs(Lh[r <= q.R]) ** 2))  # int_{|x| <= R lambda}
    margin = c0_target * energy - inner_energy - lhs
    rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "rhs_hessian": t1, "rhs_gradient": t2, "rhs_mass": t3,
            "difference": lhs - rhs, "relative_difference": rel, "identity_pass": rel < 1e-4,
            "energy": energy, "inner_energy": inner_energy, "margin": margin,
            "bound_pass": margin >= -1e-8 * energy}


def corrected_phase(theta: float, lam: float, g, q: CutoffQ, grid: RadialGrid, W_mass: float) -> float:
    """psi = theta - <g, i A0(lambda) g> / (4 ||W||^2)."""
    g = np.asarray(g, dtype=complex)
    pair = grid.inner(g, 1j * apply_virial("A0", lam, g, q, grid))
    return float(theta - pair / (4 * W_mass))


def W_virial_check(lam: float, q: CutoffQ, grid: RadialGrid) -> float:
    """max relative gap between A(lambda) W_lambda and lambda^{-4} (Lambda W)_lambda on r <= R lambda."""
    from .ground_state import LambdaW_profile
    r = grid.r
    Wl = W_profile(r, grid.N, lam)
    lhs = apply_virial("A", lam, Wl, q, grid)
    rhs = LambdaW_profile(r, grid.N, lam) / lam ** 4
    m = r <= q.R * lam
    return float(np.max(np.abs(lhs[m] - rhs[m])) / np.max(np.abs(rhs[m])))


def _smooth_profile(r, rng):
    """Random complex sum of Gaussians, smooth and even in r."""
    out = np.zeros_like(r, dtype=complex)
    for _ in range(3):
        a = rng.uniform(0.3, 3.0)
        out += (rng.standard_normal() + 1j * rng.standard_normal()) * np.exp(-(r / a) ** 2)
    return out


def scaling_check(lam: float, q: CutoffQ, grid: RadialGrid, seed: int = 0) -> dict:
    """max relative gap in A(lambda)(h_lambda) = lambda^{-4} (A h)_lambda (and the same for A0).

    h is smooth and known in closed form, so h_lambda is sampled exactly; (A h) is
    evaluated on the dilated grid whose nodes are r / lambda.
    """
    rng = np.random.default_rng(seed)
    coef = [(rng.uniform(0.3, 3.0), rng.standard_normal() + 1j * rng.standard_normal()) for _ in range(3)]

    def h(r):
        return sum(c * np.exp(-(r / a) ** 2) for a, c in coef)

    k = (grid.N - 4) / 2
    gd = grid.dilated(lam)
    out = {}
    for kind in ("A", "A0"):
        lhs = apply_virial(kind, lam, lam ** -k * h(grid.r / lam), q, grid)
        rhs = lam ** -4 * lam ** -k * apply_virial(kind, 1.0, h(gd.r), q, gd)
        out[kind] = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    return {"lambda": lam, **out, "max": max(out.values())}


def antisymmetry_check(lam: float, q: CutoffQ, grid: RadialGrid, pairs: int = 100, seed: int = 0) -> dict:
    """max over random smooth pairs of |<h1, A0 h2> + <A0 h1, h2>| / (||h1|| ||A0 h2|| + ||A0 h1|| ||h2||)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        h1 = _smooth_profile(grid.r / lam, rng)
        h2 = _smooth_profile(grid.r / lam, rng)
        a1 = apply_virial("A0", lam, h1, q, grid)
        a2 = apply_virial("A0", lam, h2, q, grid)
        s = grid.inner(h1, a2) + grid.inner(a1, h2)
        scale = grid.norm(h1) * grid.norm(a2) + grid.norm(a1) * grid.norm(h2)
        worst = max(worst, abs(s) / scale)
    return {"lambda": lam, "max_relative": worst, "pairs": pairs}
