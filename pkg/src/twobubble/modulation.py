"""Two-bubble modulation: decomposition, parameter rates, the reduced ODE and the shooting coordinates.

The ansatz is u = e^{i zeta} W_mu + e^{i theta} W_lambda + g with g orthogonal to
i e^{i zeta} Lambda W_mu, e^{i zeta} W_mu, i e^{i theta} Lambda W_lambda and
e^{i theta} W_lambda.  Differentiating these four conditions along a solution
gives a 4x4 linear system for the parameter rates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .ground_state import Constants, Lambda2W_profile, LambdaW_profile, W_profile
from .linearized import EigenPair, alpha_fields, alpha_project, orthogonality_directions
from .nonlinearity import f_eval, fprime_apply
from .radial_core import ConfigError, RadialGrid


class DecompositionError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class RegimeError(ValueError):
    pass


class DegenerateFrameError(RuntimeError):
    pass


@dataclass(frozen=True)
class BubbleParams:
    zeta: float
    mu: float
    theta: float
    lam: float

    def __post_init__(self):
        if not (self.mu > 0 and self.lam > 0):
            raise ConfigError(f"scales must be positive (mu={self.mu}, lambda={self.lam})")

    def as_array(self):
        return np.array([self.zeta, self.mu, self.theta, self.lam])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(x) for x in a))


ANSATZ_POINT = BubbleParams(-np.pi / 2, 1.0, 0.0, 0.05)


def ansatz(grid: RadialGrid, p: BubbleParams):
    r, N = grid.r, grid.N
    return np.exp(1j * p.zeta) * W_profile(r, N, p.mu) + np.exp(1j * p.theta) * W_profile(r, N, p.lam)


def _pieces(grid: RadialGrid, p: BubbleParams):
    """Directions phi_k, their parameter derivatives, and dP/dp_j."""
    r, N = grid.r, grid.N
    ez, et = np.exp(1j * p.zeta), np.exp(1j * p.theta)
    Wm, LWm, L2Wm = W_profile(r, N, p.mu), LambdaW_profile(r, N, p.mu), Lambda2W_profile(r, N, p.mu)
    Wl, LWl, L2Wl = W_profile(r, N, p.lam), LambdaW_profile(r, N, p.lam), Lambda2W_profile(r, N, p.lam)
    phi = orthogonality_directions(grid, p.zeta, p.mu, p.theta, p.lam)
    z = np.zeros(grid.n, dtype=complex)
    # dphi[k][j] = d phi_k / d p_j; d/dmu u_mu = -(Lambda u)_mu / mu
    dphi = [
        [-ez * LWm, -1j * ez * L2Wm / p.mu, z, z],
        [1j * ez * Wm, -ez * LWm / p.mu, z, z],
        [z, z, -et * LWl, -1j * et * L2Wl / p.lam],
        [z, z, 1j * et * Wl, -et * LWl / p.lam],
    ]
    dP = [1j * ez * Wm, -ez * LWm / p.mu, 1j * et * Wl, -et * LWl / p.lam]
    return phi, dphi, dP


# rows 1 and 3 flipped so the scaled diagonal is +2 ||W||^2
_ROW_SIGN = np.array([-1.0, 1.0, -1.0, 1.0])


def rate_matrix(grid: RadialGrid, p: BubbleParams, g):
    """Scaled M with M (mu^4 zeta', mu^3 mu', lambda^4 theta', lambda^3 lambda') = B."""
    phi, dphi, dP = _pieces(grid, p)
    M = np.array([[grid.inner(phi[k], dP[j]) - grid.inner(dphi[k][j], g) for j in range(4)]
                  for k in range(4)])
    col = np.array([p.mu ** -4, p.mu ** -3, p.lam ** -4, p.lam ** -3])
    return _ROW_SIGN[:, None] * M * col[None, :], col, phi


def orthogonality_residuals(grid: RadialGrid, p: BubbleParams, g) -> np.ndarray:
    """<phi_k, g> / ||phi_k||."""
    return np.array([grid.inner(ph, g) / grid.norm(ph) for ph in orthogonality_directions(grid, p.zeta, p.mu, p.theta, p.lam)])


@dataclass(frozen=True)
class ModulationFrame:
    time: float
    params: BubbleParams
    g: np.ndarray = field(repr=False)
    a1_plus: float
    a1_minus: float
    a2_plus: float
    a2_minus: float
    g_norm: float
    iterations: int = 0
    residuals: np.ndarray = field(default=None, repr=False)


def decompose(u, guess: BubbleParams, grid: RadialGrid, ep: EigenPair | None = None, time: float = 0.0,
              eta: float = 0.15, tol: float = 1e-8, max_iter: int = 20) -> ModulationFrame:
    """Newton on the four orthogonality conditions, starting from guess."""
    u = np.asarray(u, dtype=complex)
    p = guess
    unorm = grid.norm(u)
    res = None
    for it in range(max_iter + 1):
        if p.lam / p.mu > eta:
            raise RegimeError(f"lambda/mu = {p.lam / p.mu:.3g} > eta = {eta}: bubbles not separated")
        g = u - ansatz(grid, p)
        res = orthogonality_residuals(grid, p, g)
        gn = grid.norm(g)
        # below tol * ||g|| or at the roundoff floor of forming u - P
        if np.all(np.abs(res) <= max(tol * gn, 16 * np.finfo(float).eps * unorm)):
            break
        if it == max_iter:
            raise DecompositionError(f"no convergence after {max_iter} Newton steps; residuals {res}", res)
        Ms, col, phi = rate_matrix(grid, p, g)
        F = _ROW_SIGN * np.array([grid.inner(ph, g) for ph in phi])
        step = np.linalg.solve(Ms, F) * col
        x = p.as_array() + step
        # keep the scales positive
        for j in (1, 3):
            if x[j] <= 0:
                x[j] = 0.5 * p.as_array()[j]
        p = BubbleParams.from_array(x)
    a1 = a2 = (np.nan, np.nan)
    if ep is not None:
        a1 = alpha_project(p.zeta, p.mu, g, ep)
        a2 = alpha_project(p.theta, p.lam, g, ep)
    return ModulationFrame(time, p, g, a1[0], a1[1], a2[0], a2[1], grid.energy_norm(g), it, res)


def pde_time_derivative(grid: RadialGrid, u):
    """u_t = -i (Delta^2 u - f(u)) on the grid."""
    return -1j * (grid.bilap @ u - f_eval(u, grid.N))


def ansatz_time_derivative(grid: RadialGrid, p: BubbleParams, g):
    """u_t for u = ansatz + g, with Delta^2 of the bubbles replaced by f of the bubbles (exact)."""
    N = grid.N
    A = np.exp(1j * p.zeta) * W_profile(grid.r, N, p.mu)
    B = np.exp(1j * p.theta) * W_profile(grid.r, N, p.lam)
    g = np.asarray(g, dtype=complex)
    return -1j * (f_eval(A, N) + f_eval(B, N) + grid.bilap @ g - f_eval(A + B + g, N))


def modulation_rates(frame: ModulationFrame, du_dt, grid: RadialGrid, max_cond: float = 1e6) -> dict:
    p = frame.params
    Ms, col, phi = rate_matrix(grid, p, frame.g)
    cond = float(np.linalg.cond(Ms))
    if cond > max_cond:
        raise DegenerateFrameError(f"modulation matrix condition number {cond:.3g} > {max_cond:g}")
    B = _ROW_SIGN * np.array([grid.inner(ph, du_dt) for ph in phi])
    scaled = np.linalg.solve(Ms, B)
    rates = scaled * col
    return {"zeta_t": rates[0], "mu_t": rates[1], "theta_t": rates[2], "lambda_t": rates[3],
            "scaled_rates": scaled, "M": Ms, "B": B, "cond": cond}


def K_term(frame: ModulationFrame, grid: RadialGrid) -> float:
    """K = -<e^{i theta} Lambda W_lambda, f(S + g) - f(S) - f'(S) g>, S the two-bubble sum."""
    p, N = frame.params, grid.N
    S = ansatz(grid, p)
    g = np.asarray(frame.g, dtype=complex)
    rem = f_eval(S + g, N) - f_eval(S, N) - fprime_apply(S, g, N)
    return -grid.inner(np.exp(1j * p.theta) * LambdaW_profile(grid.r, N, p.lam), rem)


# -- reduced dynamics -----------------------------------------------------------------

def effective_constants(c: Constants, coupling: float = 1.0):
    """(C1, C2, C_tilde) with the interaction scaled by `coupling`.

    coupling = 1 is the leading law with C1 = int W^{(N+4)/(N-4)}; coupling = C_N
    accounts for W(0) = C_N in the pairing int W_mu W_lambda^{(N+4)/(N-4)}.
    """
    C1 = coupling * c.C1
    C2 = coupling * c.C2
    Ct = (4 * c.W_mass / ((c.N - 12) * C1)) ** (2 / (c.N - 12))
    return C1, C2, Ct


def closed_form_lambda(t, c: Constants, coupling: float = 1.0, C_tilde: float | None = None):
    Ct = effective_constants(c, coupling)[2] if C_tilde is None else C_tilde
    return Ct * np.abs(np.asarray(t, dtype=float)) ** (-2 / (c.N - 12))


def closed_form_residual(c: Constants, t_samples, C_tilde: float | None = None) -> float:
    """max |lambda_cf' - C1 lambda_cf^{(N-10)/2} / (2 ||W||^2)| / |lambda_cf'|."""
    t = np.abs(np.asarray(t_samples, dtype=float))
    N = c.N
    Ct = c.C_tilde if C_tilde is None else C_tilde
    a = 2 / (N - 12)
    lam = Ct * t ** (-a)
    dlam = a * Ct * t ** (-a - 1)
    rhs = c.C1 * lam ** ((N - 10) / 2) / (2 * c.W_mass)
    return float(np.max(np.abs(dlam - rhs) / np.abs(dlam)))


def closed_form_growth(t0: float, t1: float, c: Constants, nu: float, coupling: float = 1.0) -> float:
    """nu int_{t0}^{t1} lambda_cf^{-4} dt, exact."""
    Ct = effective_constants(c, coupling)[2]
    b = 8 / (c.N - 12)
    return nu * Ct ** -4 * (abs(t0) ** (b + 1) - abs(t1) ** (b + 1)) / (b + 1)


@dataclass(frozen=True)
class ReducedState:
    t: float
    params: BubbleParams
    a2_plus: float
    a2_minus: float
    a1_plus: float = 0.0
    a1_minus: float = 0.0
    K_forcing: float = 0.0
    growth2: float = 0.0  # nu int lambda^{-4} since the initial time
    growth1: float = 0.0  # nu int mu^{-4} since the initial time


@dataclass
class ReducedTrajectory:
    states: list
    status: str
    message: str = ""

    def column(self, name):
        if name in ("zeta", "mu", "theta", "lam"):
            return np.array([getattr(s.params, name) for s in self.states])
        return np.array([getattr(s, name) for s in self.states])


def _grow(a, x):
    if a == 0:
        return 0.0
    with np.errstate(over="ignore", under="ignore"):
        return float(a * np.exp(x))


def integrate_reduced(t0: float, t1: float, s0: ReducedState, c: Constants, nu: float, t_eval=None,
                      coupling: float = 1.0, rtol: float = 1e-10,
                      overflow_guard: float | None = None) -> ReducedTrajectory:
    """Leading-order modulation ODE with frozen (zeta, mu) and linear a+- dynamics.

    State (lambda, theta, I) with I' = lambda^{-4}; a2+- = a2+-(t0) exp(+-nu I) and
    a1+- = a1+-(t0) exp(+-nu (t - t0) / mu^4), exact given I.  The growth exponents
    are kept alongside since the amplitudes leave floating-point range quickly.
    """
    if not t0 < t1:
        raise ConfigError(f"need t0 < t1 (got {t0}, {t1})")
    if not s0.params.lam > 0:
        raise ConfigError("lambda(t0) must be positive")
    C1, C2, _ = effective_constants(c, coupling)
    m, N, K = c.W_mass, c.N, s0.K_forcing

    def rhs(t, y):
        lam, th, _ = y
        lam = max(lam, 1e-300)
        return [C1 * lam ** ((N - 10) / 2) / (2 * m),
                (K - C2 * th * lam ** ((N - 4) / 2)) / (2 * lam ** 4 * m),
                lam ** -4]

    def small(t, y):
        return y[0] - 1e-150
    small.terminal = True
    events = [small]
    if overflow_guard is not None:
        la = np.log(abs(s0.a2_plus)) if s0.a2_plus else -np.inf

        def over(t, y):
            return la + nu * y[2] - overflow_guard
        over.terminal = True
        events.append(over)
    y0 = [s0.params.lam, s0.params.theta, 0.0]
    lam0 = s0.params.lam
    atol = [1e-6 * rtol * lam0, 1e-6 * rtol * max(abs(s0.params.theta), 1e-12), 1e-6 * rtol * lam0 ** -4]
    sol = solve_ivp(rhs, (t0, t1), y0, method="DOP853", rtol=rtol, atol=atol,
                    t_eval=t_eval, events=events, dense_output=False)
    states = []
    for k, t in enumerate(sol.t):
        lam, th, I = sol.y[:, k]
        g2, g1 = nu * I, nu * (t - t0) / s0.params.mu ** 4
        states.append(ReducedState(
            float(t), replace(s0.params, theta=float(th), lam=float(lam)),
            _grow(s0.a2_plus, g2), _grow(s0.a2_minus, -g2),
            _grow(s0.a1_plus, g1), _grow(s0.a1_minus, -g1), K, float(g2), float(g1)))
    status = "ok"
    msg = sol.message
    if sol.status == 1:
        status = "lambda_collapse" if len(sol.t_events[0]) else "overflow"
    elif sol.status < 0:
        status = "failed"
    return ReducedTrajectory(states, status, msg)


def exponent_ladder(N: int, t_values=(-1e2, -1e3, -1e4)) -> dict:
    """Bootstrap envelopes at each t: g, theta, lambda correction, and lambda itself.

    The bootstrap needs |t|^{-(N-3)/(2(N-12))} (g) < |t|^{-1/(N-12)} (theta) and the
    lambda correction |t|^{-5/(2(N-12))} below lambda ~ |t|^{-2/(N-12)}.
    """
    out = []
    for t in t_values:
        T = abs(t)
        g = T ** (-(N - 3) / (2 * (N - 12)))
        th = T ** (-1 / (N - 12))
        dl = T ** (-5 / (2 * (N - 12)))
        lam = T ** (-2 / (N - 12))
        out.append({"t": t, "g": g, "theta": th, "lambda_correction": dl, "lambda": lam,
                    "ordered": bool(g < th and dl < lam and g < lam)})
    return {"rows": out, "pass": all(r["ordered"] for r in out)}


# -- initial data --------------------------------------------------------------------

def initial_data_envelope(T: float, N: int):
    """Admissible initial box at time T: (allowed lambda offset, allowed unstable amplitude)."""
    T = abs(T)
    return 0.5 * T ** (-5 / (2 * (N - 12))), 0.5 * T ** (-N / (2 * (N - 12)))


@dataclass(frozen=True)
class InitialData:
    g0: np.ndarray = field(repr=False)
    coefficients: np.ndarray
    matrix: np.ndarray = field(repr=False)
    functionals: np.ndarray
    dominance: float
    comparison_radius: float
    params: BubbleParams


def _initial_blocks(lam0: float, grid: RadialGrid, ep: EigenPair):
    r, N = grid.r, grid.N
    W, LW = W_profile(r, N), LambdaW_profile(r, N)
    Wl, LWl = W_profile(r, N, lam0), LambdaW_profile(r, N, lam0)
    a1p, a1m = alpha_fields(ep, -np.pi / 2, 1.0)
    a2p, a2m = alpha_fields(ep, 0.0, lam0)
    basis = [1j * a1m, -1j * a1p, W.astype(complex), -1j * LW,
             lam0 ** 4 * 1j * a2m, -lam0 ** 4 * 1j * a2p, 1j * Wl, LWl.astype(complex)]
    funcs = [a1p, a1m, LW.astype(complex), 1j * W, a2p, a2m, lam0 ** -4 * 1j * LWl, -lam0 ** -4 * Wl]
    return basis, funcs


def dominance_ratio(M) -> float:
    """max_i sum_{j != i} |M~_ij| / |M~_ii| for M~ = D M D, D = |diag M|^{-1/2}."""
    d = np.abs(np.diag(M))
    Ms = M / np.sqrt(np.outer(d, d))
    off = np.abs(Ms).sum(axis=1) - np.abs(np.diag(Ms))
    return float(np.max(off))


def comparison_radius(M) -> float:
    """Spectral radius of |D^{-1} (M - D)|, D = diag M.  Below 1 iff M is an H-matrix,
    i.e. diagonally dominant after some positive rescaling of rows and columns."""
    d = np.diag(M)
    J = np.abs(M / d[:, None])
    np.fill_diagonal(J, 0.0)
    return float(np.max(np.abs(np.linalg.eigvals(J))))


def initial_data(T: float, lam0: float, a1_0: float, a2_0: float, grid: RadialGrid, ep: EigenPair,
                 check_envelope: bool = True, c: Constants | None = None) -> InitialData:
    """g0 in the span of eight modes with prescribed spectral and orthogonality pairings.

    Pairings: (alpha+, alpha-) at (-pi/2, 1), Lambda W, i W, (alpha+, alpha-) at (0, lam0),
    lam0^{-4} i Lambda W_lam0, -lam0^{-4} W_lam0 take the values (a1_0, 0, 0, 0, a2_0, 0, 0, 0).
    """
    N = grid.N
    if check_envelope:
        from .ground_state import closed_form_constants
        c = c or closed_form_constants(N)
        dl, da = initial_data_envelope(T, N)
        lc = c.C_tilde * abs(T) ** (-2 / (N - 12))
        if abs(lam0 - lc) > dl * (1 + 1e-12) or max(abs(a1_0), abs(a2_0)) > da * (1 + 1e-12):
            raise RegimeError(f"(lambda0, a1, a2) = ({lam0}, {a1_0}, {a2_0}) outside the admissible box at T={T}")
    basis, funcs = _initial_blocks(lam0, grid, ep)
    M = np.array([[grid.inner(f, b) for b in basis] for f in funcs])
    dom, rho = dominance_ratio(M), comparison_radius(M)
    if rho >= 1:
        raise RegimeError(f"eight-mode system lost diagonal dominance (comparison radius {rho:.3g}); "
                          f"lambda0 = {lam0} too large")
    rhs = np.array([a1_0, 0, 0, 0, a2_0, 0, 0, 0], dtype=float)
    x = np.linalg.solve(M, rhs)
    g0 = sum(xi * b for xi, b in zip(x, basis))
    phi = np.array([grid.inner(f, g0) for f in funcs])
    return InitialData(g0, x, M, phi, dom, rho, BubbleParams(-np.pi / 2, 1.0, 0.0, lam0))


# -- cube coordinates ------------------------------------------------------------------

def cube_scales(t: float, c: Constants, coupling: float = 1.0):
    N = c.N
    T = abs(t)
    return (closed_form_lambda(t, c, coupling), T ** (-5 / (2 * (N - 12))), T ** (-N / (2 * (N - 12))))


def cube_coords(t: float, lam: float, a1p: float, a2p: float, c: Constants, coupling: float = 1.0):
    """X_t^{-1}: (p0, p1, p2) with lambda = lambda_cf + p0 s_lam and a_i+ = p_i s_a."""
    if not t < 0:
        raise ConfigError(f"t={t}: cube coordinates are defined for negative times")
    lc, sl_, sa = cube_scales(t, c, coupling)
    return ((lam - lc) / sl_, a1p / sa, a2p / sa)


def cube_point(t: float, p, c: Constants, coupling: float = 1.0):
    """X_t: (lambda, a1+, a2+) from (p0, p1, p2)."""
    lc, sl_, sa = cube_scales(t, c, coupling)
    return (lc + p[0] * sl_, p[1] * sa, p[2] * sa)


def in_cube(p, half: float = 0.5) -> bool:
    return bool(np.all(np.abs(np.asarray(p)) <= half))
