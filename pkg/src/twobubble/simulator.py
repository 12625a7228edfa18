"""Radial time integration of i u_t = Delta^2 u - |u|^{8/(N-4)} u and two-bubble tracking.

Strang splitting: half a pointwise phase rotation, a Crank-Nicolson step for
u_t = -i Delta^2 u (banded LU, unitary in the weighted product since the discrete
bilaplacian is self-adjoint there), half a phase rotation.  Mass is conserved to
roundoff; the discrete energy to O(dt^2).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg.lapack import zgbtrf, zgbtrs

from .ground_state import C_N, W_profile, closed_form_constants, energy_values
from .linearized import EigenPair, solve_eigenpair
from .modulation import (BubbleParams, DecompositionError, ModulationFrame, RegimeError, ansatz,
                         decompose, effective_constants, initial_data, integrate_reduced,
                         modulation_rates, pde_time_derivative, K_term, ReducedState)
from .nonlinearity import exponent
from .radial_core import ConfigError, Grading, RadialField, RadialGrid, build_grid
from .virial import build_q, corrected_phase


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    N: int = 13
    r_max: float = 200.0
    n_nodes: int = 2048
    stretch: float | None = None
    t_start: float = -1.0
    t_end: float = 0.0
    dt: float = 1e-4
    output_stride: int = 100
    decomposition: bool = False
    seed: int = 0
    lambda_min: float | None = None
    eta: float = 0.15
    blowup_factor: float = 1e3

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ConfigError(f"t_start={self.t_start} must be < t_end={self.t_end}")
        if self.t_end > 0:
            raise ConfigError(f"t_end={self.t_end}: times are negative (solution on (-inf, T0])")
        if not self.dt > 0:
            raise ConfigError(f"dt={self.dt}: must be positive")
        if not (isinstance(self.output_stride, (int, np.integer)) and self.output_stride >= 1):
            raise ConfigError(f"output_stride={self.output_stride!r}: positive integer expected")
        if self.lambda_min is not None and self.dt > 0.1 * self.lambda_min ** 4:
            raise ConfigError(f"dt={self.dt:g} exceeds the accuracy bound 0.1 lambda_min^4 = "
                              f"{0.1 * self.lambda_min ** 4:g}")

    def grid(self) -> RadialGrid:
        gr = Grading() if self.stretch is None else Grading(stretch=self.stretch)
        return build_grid(self.N, self.r_max, self.n_nodes, gr)

    def as_dict(self):
        return asdict(self)


def resolved_dt(lam: float, N: int = 13, factor: float = 0.02) -> float:
    """Step with a nonlinear phase increment of `factor` radians at the peak of W_lambda."""
    return factor * lam ** 4 / C_N(N) ** exponent(N)


class Stepper:
    """Strang step of fixed size on one grid (factorization cached)."""

    def __init__(self, grid: RadialGrid, dt: float):
        self.grid, self.dt = grid, dt
        self.p = exponent(grid.N)
        B = grid.bilap.tocoo()
        self.bw = bw = int(np.max(np.abs(B.row - B.col)))
        n = grid.n
        ab = np.zeros((3 * bw + 1, n), dtype=complex)
        ab[2 * bw + B.row - B.col, B.col] = 0.5j * dt * B.data
        ab[2 * bw, :] += 1.0
        lub, piv, info = zgbtrf(ab, bw, bw)
        if info != 0:
            raise NumericalError(f"banded LU failed (info={info}, n={n}, bandwidth={bw}, dt={dt})")
        self._lub, self._piv = lub, piv
        self._B = grid.bilap

    def __call__(self, u):
        h = 0.5 * self.dt
        u = u * np.exp(1j * h * np.abs(u) ** self.p)
        rhs = u - 1j * h * (self._B @ u)
        u, info = zgbtrs(self._lub, self.bw, self.bw, rhs, self._piv)
        if info != 0:
            raise NumericalError(f"banded solve failed (info={info})")
        return u * np.exp(1j * h * np.abs(u) ** self.p)


_STEPPERS: dict = {}


def _stepper(grid: RadialGrid, dt: float) -> Stepper:
    key = (grid.N, grid.r_max, grid.n, grid.grading, dt)
    if key not in _STEPPERS:
        if len(_STEPPERS) > 8:
            _STEPPERS.clear()
        _STEPPERS[key] = Stepper(grid, dt)
    return _STEPPERS[key]


def step(u, dt: float, grid: RadialGrid | None = None):
    """One Strang step; accepts a RadialField or samples on `grid`."""
    if isinstance(u, RadialField):
        return RadialField(u.grid, _stepper(u.grid, dt)(u.values))
    if grid is None:
        raise ConfigError("step: a grid is required for raw samples")
    v = np.asarray(u, dtype=complex)
    if not np.all(np.isfinite(v)):
        raise NumericalError("step: non-finite input")
    return _stepper(grid, dt)(v)


@dataclass
class Trajectory:
    times: np.ndarray
    energy: np.ndarray
    mass: np.ndarray
    frames: list = field(repr=False)
    psi: np.ndarray = None
    status: str = "complete"
    reason: str = ""
    u_final: np.ndarray = field(default=None, repr=False)
    config: SimConfig = None

    def rows(self):
        """CSV rows (t, lambda, theta, zeta, mu, g_norm, a1p, a1m, a2p, a2m, E, mass, psi)."""
        out = []
        for k, t in enumerate(self.times):
            fr = self.frames[k] if self.frames else None
            if fr is None:
                vals = [np.nan] * 9
            else:
                p = fr.params
                vals = [p.lam, p.theta, p.zeta, p.mu, fr.g_norm, fr.a1_plus, fr.a1_minus, fr.a2_plus, fr.a2_minus]
            psi = self.psi[k] if self.psi is not None else np.nan
            out.append([t, *vals, self.energy[k], self.mass[k], psi])
        return out


TRAJECTORY_COLUMNS = ("t", "lambda", "theta", "zeta", "mu", "g_norm", "a1p", "a1m", "a2p", "a2m", "E", "mass", "psi")


def run(u0, config: SimConfig, grid: RadialGrid | None = None, guess: BubbleParams | None = None,
        ep: EigenPair | None = None, q=None, monitor=None) -> Trajectory:
    """Integrate from config.t_start to config.t_end.

    The step is config.dt adjusted so that an integer number of steps fits.
    With decomposition on, every output frame is decomposed (warm-started); a
    failure truncates the trajectory.  `monitor(t, u, frame)` may return a
    string to stop early (used by the shooting harness).
    """
    if isinstance(u0, RadialField):
        grid, u = u0.grid, u0.values.astype(complex)
    else:
        if grid is None:
            grid = config.grid()
        u = np.asarray(u0, dtype=complex).copy()
    if grid.N != config.N:
        raise ConfigError(f"grid dimension {grid.N} != config N {config.N}")
    nsteps = max(1, int(round((config.t_end - config.t_start) / config.dt)))
    dt = (config.t_end - config.t_start) / nsteps
    st = _stepper(grid, dt)
    if config.decomposition:
        if guess is None:
            raise ConfigError("decomposition requires an initial parameter guess")
        ep = ep or solve_eigenpair(grid)
        if q is None:
            q = build_q(0.01, 10.0, grid.N, strict=False)
    W_mass = closed_form_constants(grid.N).W_mass
    peak0 = np.max(np.abs(u))
    times, E, M, frames, psi = [], [], [], [], []
    status, reason = "complete", ""
    p = guess

    def record(k, u):
        nonlocal p
        t = config.t_start + k * dt
        fr = None
        if config.decomposition:
            fr = decompose(u, p, grid, ep, time=t, eta=config.eta)
            p = fr.params
        times.append(t)
        E.append(energy_values(grid, u))
        M.append(grid.norm(u) ** 2)
        frames.append(fr)
        psi.append(corrected_phase(fr.params.theta, fr.params.lam, fr.g, q, grid, W_mass) if fr else np.nan)
        return t, fr

    try:
        t, fr = record(0, u)
    except (DecompositionError, RegimeError) as e:
        return Trajectory(np.array([]), np.array([]), np.array([]), [], np.array([]),
                          "truncated", f"initial decomposition failed: {e}", u, config)
    for k in range(1, nsteps + 1):
        u = st(u)
        if k % config.output_stride and k != nsteps:
            continue
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > config.blowup_factor * peak0:
            status, reason = "truncated", f"instability at t={config.t_start + k * dt:.6g}"
            break
        try:
            t, fr = record(k, u)
        except (DecompositionError, RegimeError) as e:
            status, reason = "truncated", f"decomposition failed at t={config.t_start + k * dt:.6g}: {e}"
            break
        if fr is not None and dt > 0.1 * fr.params.lam ** 4:
            status, reason = "truncated", f"dt={dt:g} above 0.1 lambda^4 at lambda={fr.params.lam:.4g}"
            break
        if monitor is not None:
            msg = monitor(t, u, fr)
            if msg:
                status, reason = "stopped", msg
                break
    return Trajectory(np.array(times), np.array(E), np.array(M), frames, np.array(psi), status, reason, u, config)


def conservation_audit(traj: Trajectory, bins: int = 10) -> dict:
    """Max relative drift of energy and mass, and a histogram of per-sample changes."""
    if len(traj.times) == 0:
        return {"energy_drift": 0.0, "mass_drift": 0.0, "histogram": None, "samples": 0}
    E, M = traj.energy, traj.mass

    def drift(x):
        ref = abs(x[0])
        return float(np.max(np.abs(x - x[0])) / ref) if ref > 0 else float(np.max(np.abs(x - x[0])))

    def scale(x):
        return abs(x[0]) if abs(x[0]) > 0 else 1.0

    inc = np.abs(np.diff(E)) / scale(E) if len(E) > 1 else np.zeros(0)
    hist = None
    if inc.size and np.any(inc > 0):
        lg = np.log10(inc[inc > 0])
        counts, edges = np.histogram(lg, bins=bins)
        hist = {"log10_edges": edges.tolist(), "counts": counts.tolist(), "zero": int(np.sum(inc == 0))}
    return {"energy_drift": drift(E), "mass_drift": drift(M),
            "mass_step_max": float(np.max(np.abs(np.diff(M))) / scale(M)) if len(M) > 1 else 0.0,
            "histogram": hist, "samples": len(E)}


# -- experiments -------------------------------------------------------------------

def stationarity(grid: RadialGrid, dt: float, horizon: float, phase: float = 0.0, stride: int = 100) -> dict:
    """Deviation of the numerical solution from e^{i phase} W over the horizon."""
    W = W_profile(grid.r, grid.N).astype(complex) * np.exp(1j * phase)
    cfg = SimConfig(N=grid.N, r_max=grid.r_max, n_nodes=grid.n, t_start=-horizon, t_end=0.0, dt=dt,
                    output_stride=stride, blowup_factor=10.0)
    tr = run(W, cfg, grid=grid)
    dev = grid.norm(tr.u_final - W) / grid.norm(W)
    return {"deviation": float(dev) if np.isfinite(dev) else np.inf, "status": tr.status, "reason": tr.reason,
            "t_reached": float(tr.times[-1] + horizon) if len(tr.times) else 0.0}


def stationarity_window(grid: RadialGrid, dt: float, tol: float = 1e-5, t_max: float = 0.05, stride: int = 100) -> float:
    """Longest time for which ||u(t) - W|| / ||W|| stays below tol."""
    W = W_profile(grid.r, grid.N).astype(complex)
    st = _stepper(grid, dt)
    u, t, nW = W.copy(), 0.0, grid.norm(W)
    k = 0
    while t < t_max:
        u = st(u)
        k += 1
        t = k * dt
        if k % stride == 0 and grid.norm(u - W) / nW > tol:
            return t - stride * dt
    return t


def conjugacy_check(grid: RadialGrid, lam: float = 0.5, horizon: float = 1e-3, dt: float = 1e-6,
                    profile=None) -> dict:
    """Compare the run from u0_lambda over horizon lambda^4 T with (u(T))_lambda.

    Scaling law: u(t)_lambda evolves into u(t / lambda^4)_lambda.  The comparison is
    made after rescaling back by 1/lambda, which only samples the finer run inside
    its domain.
    """
    N = grid.N
    u0 = W_profile(grid.r, N).astype(complex) if profile is None else np.asarray(profile, dtype=complex)
    n = max(1, int(round(horizon / dt)))
    st1, st2 = _stepper(grid, horizon / n), _stepper(grid, horizon * lam ** 4 / n)
    u = u0.copy()
    U = grid.rescale(u0, lam)
    for _ in range(n):
        u = st1(u)
        U = st2(U)
    back = grid.rescale(U, 1.0 / lam)
    return {"relative_gap": float(grid.norm(back - u) / grid.norm(u)), "lambda": lam, "horizon": horizon,
            "steps": n}


def _exp_slope(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    return float(np.linalg.lstsq(A, np.log(np.abs(y)), rcond=None)[0][0])


def growth_experiment(lam0: float = 0.05, amp: float = 1e-6, window: float = 4.0, grid: RadialGrid | None = None,
                      ep: EigenPair | None = None, dt_factor: float = 0.02, samples: int = 41) -> dict:
    """Excite only a2+ and fit d log a2+/dt over a window of `window` e-folds.

    The unexcited two-bubble run is subtracted frame by frame so the slope measures
    the response to the excitation alone.
    """
    grid = grid or build_grid()
    ep = ep or solve_eigenpair(grid)
    rate = ep.nu / lam0 ** 4
    horizon = window / rate
    dt = resolved_dt(lam0, grid.N, dt_factor)
    nsteps = int(np.ceil(horizon / dt))
    dt = horizon / nsteps
    stride = max(1, nsteps // (samples - 1))
    p0 = BubbleParams(-np.pi / 2, 1.0, 0.0, lam0)
    data = initial_data(-1.0, lam0, 0.0, amp, grid, ep, check_envelope=False)
    base = ansatz(grid, p0)
    cfg = SimConfig(N=grid.N, r_max=grid.r_max, n_nodes=grid.n, t_start=-horizon, t_end=0.0, dt=dt,
                    output_stride=stride, decomposition=True)
    tr1 = run(base + data.g0, cfg, grid=grid, guess=p0, ep=ep)
    tr0 = run(base, cfg, grid=grid, guess=p0, ep=ep)
    m = min(len(tr1.frames), len(tr0.frames))
    t = tr1.times[:m] - tr1.times[0]
    a = np.array([tr1.frames[k].a2_plus - tr0.frames[k].a2_plus for k in range(m)])
    slope = _exp_slope(t, a)
    return {"measured_rate": slope, "predicted_rate": rate, "relative_gap": abs(slope / rate - 1),
            "lambda0": lam0, "amp": amp, "horizon": horizon, "dt": dt,
            "a2p_start": float(a[0]), "a2p_end": float(a[-1]), "status": (tr1.status, tr0.status)}


def _fit_holdout(x, y, factor=2.0):
    """Fit c = max y/x over the first half, check the second half stays below factor * c."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 4:
        return {"fitted": np.nan, "holdout_max": np.nan, "pass": False}
    h = len(x) // 2
    c = float(np.max(y[:h] / x[:h]))
    c2 = float(np.max(y[h:] / x[h:]))
    return {"fitted": c, "holdout_max": c2, "pass": bool(np.isfinite(c) and c2 <= factor * max(c, 1e-300))}


def two_bubble_experiment(T: float | None, lambda0: float, a1_0: float, a2_0: float, config: SimConfig | None = None,
                          coupling: float | None = None, window: float = 8.0, dt_factor: float = 0.02,
                          rate_frames: int = 12, g_tol: float = 1e-2, grid: RadialGrid | None = None) -> dict:
    """Run -iW + W_lambda0 + g0 and compare the decomposition with the reduced model.

    Time is measured from the start T.  The window is `window` unstable e-folds
    (lambda0^4 / nu each) unless the config gives t_end.  The reduced model uses the
    interaction constant `coupling` * C1 (default C_N, the value that matches the
    pairing of two bubbles with W(0) = C_N).  Comparisons use the longest prefix with
    ||g||_E <= g_tol ||W||_E.
    """
    if not 0 < lambda0 <= 0.1:
        raise RegimeError(f"lambda0={lambda0}: desk-scale regime needs 0 < lambda0 <= 0.1")
    N = config.N if config else 13
    grid = grid or (config.grid() if config else build_grid(N))
    c = closed_form_constants(N)
    coupling = C_N(N) if coupling is None else coupling
    ep = solve_eigenpair(grid)
    C1e, _, Ct = effective_constants(c, coupling)
    if T is None:
        T = -(lambda0 / Ct) ** (-(N - 12) / 2)
    horizon = window * lambda0 ** 4 / ep.nu
    dt = resolved_dt(lambda0, N, dt_factor)
    nsteps = int(np.ceil(horizon / dt))
    stride = max(1, nsteps // 80)
    cfg = SimConfig(N=N, r_max=grid.r_max, n_nodes=grid.n, t_start=T, t_end=min(T + horizon, 0.0),
                    dt=horizon / nsteps, output_stride=stride, decomposition=True)
    data = initial_data(T, lambda0, a1_0, a2_0, grid, ep, check_envelope=False)
    p0 = BubbleParams(-np.pi / 2, 1.0, 0.0, lambda0)
    u0 = ansatz(grid, p0) + data.g0
    traj = run(u0, cfg, grid=grid, guess=p0, ep=ep)
    fr = [f for f in traj.frames if f is not None]
    # longest stable window: ||g||_E below g_tol ||W||_E
    WE = grid.energy_norm(W_profile(grid.r, N))
    gn_all = np.array([f.g_norm for f in fr])
    bad = np.nonzero(gn_all > g_tol * WE)[0]
    stop = int(bad[0]) if bad.size else len(fr)
    stop = max(stop, 2)
    fr = fr[:stop]
    t = traj.times[:stop]
    lam = np.array([f.params.lam for f in fr])
    theta = np.array([f.params.theta for f in fr])
    gn = gn_all[:stop]
    s0 = ReducedState(T, p0, fr[0].a2_plus, fr[0].a2_minus, fr[0].a1_plus, fr[0].a1_minus)
    red = integrate_reduced(T, t[-1], s0, c, ep.nu, t_eval=t, coupling=coupling)
    lam_red = red.column("lam")
    m = min(len(lam_red), len(lam))
    gap = np.abs(lam[:m] / lam_red[:m] - 1)
    # measured rates on a subset of frames
    idx = np.unique(np.linspace(0, len(fr) - 1, min(rate_frames, len(fr))).astype(int))
    lam_rate_res, th_rate_res, Ks = [], [], []
    for k in idx:
        f = fr[k]
        rates = modulation_rates(f, pde_time_derivative(grid, ansatz(grid, f.params) + f.g), grid)
        lp = f.params.lam
        pred = C1e * lp ** ((N - 10) / 2) / (2 * c.W_mass)
        lam_rate_res.append(abs(rates["lambda_t"] - pred) / abs(pred))
        K = K_term(f, grid)
        Ks.append(K)
        th_pred = (K - coupling * c.C2 * f.params.theta * lp ** ((N - 4) / 2)) / (2 * lp ** 4 * c.W_mass)
        th_rate_res.append(abs(rates["theta_t"] - th_pred))
    env = np.abs(t[idx]) ** (-(2 * N - 19) / (2 * (N - 12)))
    env_theta = np.abs(t[idx]) ** (-(N - 11) / (N - 12))
    psi = traj.psi[:stop]
    dpsi = np.abs(psi - theta)
    dl_meas = lam[-1] - lam[0]
    dl_pred = lam_red[m - 1] - lam_red[0]
    return {
        "T": T, "lambda0": lambda0, "coupling": coupling, "nu": ep.nu, "dt": cfg.dt, "horizon": horizon,
        "status": traj.status, "reason": traj.reason, "frames": len(fr), "frames_total": len(traj.times),
        "window": float(t[-1] - t[0]), "window_efolds": float((t[-1] - t[0]) * ep.nu / lambda0 ** 4),
        "times": t, "lambda": lam, "theta": theta, "g_norm": gn, "psi": psi, "lambda_reduced": lam_red,
        "lambda_max_gap": float(np.max(gap)),
        "delta_lambda_ratio": float(dl_meas / dl_pred) if dl_pred else np.nan,
        "lambda_rate_residual": np.array(lam_rate_res), "theta_rate_residual": np.array(th_rate_res),
        "K": np.array(Ks), "rate_envelope": env,
        "theta_rate_envelope": env_theta,
        "lambda_rate_fit": _fit_holdout(env, lam_rate_res),
        "theta_rate_fit": _fit_holdout(env_theta, th_rate_res),
        "psi_fit": _fit_holdout(gn ** 2, dpsi),
        "conservation": conservation_audit(traj),
        "trajectory": traj,
    }


# -- shooting --------------------------------------------------------------------------

FACES = ("p0", "p1", "p2")


@dataclass(frozen=True)
class DeskCube:
    """Desk-scale cube coordinates around the two-bubble ansatz at scale lambda0.

    p0 = (lambda / lambda_ref(t) - 1) / w_lambda, p_i = a_i+ / w_ai, with
    lambda_ref = lambda0 + lambda_rate (lambda_red(t) - lambda0) and lambda_red the
    reduced-model prediction from lambda0.  Exit when any |p_k| >= 1/2.
    """
    lambda0: float
    w_lambda: float = 0.02
    w_a1: float = 1e-4
    w_a2: float = 1e-4
    equilibrium: tuple = (0.0, 0.0)
    lambda_rate: float = 1.0

    def point(self, p):
        return self.lambda0 * (1 + self.w_lambda * p[0]), self.w_a1 * p[1], self.w_a2 * p[2]


def _forced_equilibrium(s, a):
    """a(s) - a(0) = k (e^s - 1) for a' = a + F (s in e-folds); returns a(0) - k = -F."""
    x = np.expm1(s)
    k = float(np.dot(x, a - a[0]) / np.dot(x, x))
    return float(a[0] - k)


def calibrate_cube(lambda0: float, grid: RadialGrid, ep: EigenPair, efolds: float = 1.0, frames: int = 20,
                   dt_factor: float = 0.05, w_lambda: float = 0.02, margin: float = 4.0) -> DeskCube:
    """Widths for the amplitude coordinates from an unexcited probe run.

    The interaction forces a_i+' = (nu / lambda_i^4) a_i+ + F_i.  In p coordinates the
    forcing constant must stay below nu / 2 for the faces p_i = +-1/2 to push outward,
    so the width is `margin` times the forced equilibrium |F_i| lambda_i^4 / nu.
    The same run fixes the ratio of the measured scale drift to the reduced law.
    """
    tau = lambda0 ** 4 / ep.nu
    horizon = efolds * tau
    dt = resolved_dt(lambda0, grid.N, dt_factor)
    nsteps = int(np.ceil(horizon / dt))
    p0 = BubbleParams(-np.pi / 2, 1.0, 0.0, lambda0)
    cfg = SimConfig(N=grid.N, r_max=grid.r_max, n_nodes=grid.n, t_start=-horizon, t_end=0.0, dt=horizon / nsteps,
                    output_stride=max(1, nsteps // frames), decomposition=True)
    tr = run(ansatz(grid, p0), cfg, grid=grid, guess=p0, ep=ep)
    if len(tr.frames) < 4:
        raise RegimeError(f"cube calibration run ended after {len(tr.frames)} frames: {tr.reason}")
    t = tr.times - tr.times[0]
    a1 = np.array([f.a1_plus for f in tr.frames])
    a2 = np.array([f.a2_plus for f in tr.frames])
    e1 = _forced_equilibrium(ep.nu * t / p0.mu ** 4, a1)
    e2 = _forced_equilibrium(t / tau, a2)
    lam = np.array([f.params.lam for f in tr.frames])
    ref = _reduced_scale(lambda0, t, grid.N, C_N(grid.N)) - lambda0
    kappa = float(np.dot(ref, lam - lam[0]) / np.dot(ref, ref))
    tiny = np.finfo(float).tiny
    return DeskCube(lambda0, w_lambda, max(margin * abs(e1), tiny), max(margin * abs(e2), tiny), (e1, e2), kappa)


def _reduced_scale(lambda0, s, N, coupling):
    """Leading scale law lambda' = C1e lambda^{(N-10)/2} / (2 ||W||^2) from lambda0 at s = 0, closed form."""
    c = closed_form_constants(N)
    C1e = effective_constants(c, coupling)[0]
    k = (N - 10) / 2
    return (lambda0 ** (1 - k) + (1 - k) * C1e * np.asarray(s) / (2 * c.W_mass)) ** (1 / (1 - k))


def _exit_face(p, half=0.5):
    k = int(np.argmax(np.abs(p)))
    if abs(p[k]) < half:
        return None
    return ("+" if p[k] > 0 else "-") + FACES[k]


def shoot_point(p0, cube: DeskCube, grid: RadialGrid, ep: EigenPair, horizon_efolds: float = 25.0,
                dt_factor: float = 0.05, coupling: float | None = None, checks: int = 200) -> dict:
    """Run one cube point until exit or the horizon; exit time in units of lambda0^4 / nu."""
    N = grid.N
    coupling = C_N(N) if coupling is None else coupling
    lam0, a1, a2 = cube.point(p0)
    tau = cube.lambda0 ** 4 / ep.nu
    horizon = horizon_efolds * tau
    dt = resolved_dt(cube.lambda0, N, dt_factor)
    nsteps = int(np.ceil(horizon / dt))
    stride = max(1, nsteps // checks)
    data = initial_data(-1.0, lam0, a1, a2, grid, ep, check_envelope=False)
    pp = BubbleParams(-np.pi / 2, 1.0, 0.0, lam0)
    u0 = ansatz(grid, pp) + data.g0

    def lam_ref(s):
        return cube.lambda0 + cube.lambda_rate * (_reduced_scale(cube.lambda0, s, N, coupling) - cube.lambda0)

    state = {"p": np.asarray(p0, float), "face": None, "last": (0.0, float(np.max(np.abs(p0)))), "crossing": None}

    def monitor(t, u, fr):
        s = t + horizon
        p = np.array([(fr.params.lam / lam_ref(s) - 1) / cube.w_lambda, fr.a1_plus / cube.w_a1,
                      fr.a2_plus / cube.w_a2])
        m = float(np.max(np.abs(p)))
        face = _exit_face(p)
        if face:
            # linear interpolation of max |p_k| = 1/2 between the last two checks
            s_prev, m_prev = state["last"]
            frac = 1.0 if m == m_prev else np.clip((0.5 - m_prev) / (m - m_prev), 0.0, 1.0)
            state["crossing"] = s_prev + frac * (s - s_prev)
            state["face"], state["p"] = face, p
            return face
        state["p"], state["last"] = p, (s, m)
        return None

    cfg = SimConfig(N=N, r_max=grid.r_max, n_nodes=grid.n, t_start=-horizon, t_end=0.0, dt=horizon / nsteps,
                    output_stride=stride, decomposition=True)
    tr = run(u0, cfg, grid=grid, guess=pp, ep=ep, monitor=monitor)
    if tr.status == "stopped":
        te = state["crossing"] / tau
        face = state["face"]
    elif tr.status == "truncated":
        te = ((tr.times[-1] + horizon) / tau) if len(tr.times) else 0.0
        face = "breakdown"
    else:
        te, face = horizon_efolds, "none"
    first = stride * cfg.dt / tau
    exits_first = tr.status == "stopped" and len(tr.times) == 2
    return {"p": tuple(float(x) for x in p0), "exit_time": float(te), "exit_face": face,
            "p_exit": tuple(float(x) for x in state["p"]), "first_check": bool(exits_first),
            "check_interval": float(first)}


def _bisect_p2(p0v, p1v, cube, grid, ep, lo=-0.45, hi=0.45, iters=12, **kw):
    """Bisection on the exit-face sign of p2 at fixed (p0, p1)."""
    rlo = shoot_point((p0v, p1v, lo), cube, grid, ep, **kw)
    rhi = shoot_point((p0v, p1v, hi), cube, grid, ep, **kw)
    best = max((rlo, rhi), key=lambda r: r["exit_time"])
    if rlo["exit_face"] == rhi["exit_face"]:
        return best, [rlo, rhi]
    evals = [rlo, rhi]
    slo = rlo["exit_face"]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        r = shoot_point((p0v, p1v, mid), cube, grid, ep, **kw)
        evals.append(r)
        if r["exit_time"] > best["exit_time"]:
            best = r
        if r["exit_face"] == slo:
            lo = mid
        elif r["exit_face"] in ("+p2", "-p2"):
            hi = mid
        else:
            break
    return best, evals


def shoot(T: float, T0: float, config: SimConfig | None = None, search=((-0.45, 0.45),) * 3, lambda0: float = 0.05,
          levels: int = 3, iters: int = 12, probe: float = 0.1, w_lambda: float = 0.02, w_a: float | None = None,
          horizon_efolds: float = 25.0, dt_factor: float = 0.05, grid: RadialGrid | None = None) -> dict:
    """Exit-time landscape over the desk cube, refined point, and its 3^3 neighborhood.

    T and T0 only fix the labelling of the window: the window itself is
    horizon_efolds unstable e-folds at scale lambda0 (the asymptotic cube of the
    construction is far outside desk scale).
    """
    if not T < T0 <= 0:
        raise ConfigError(f"need T < T0 <= 0 (got {T}, {T0})")
    for lo, hi in search:
        if not -0.5 <= lo < hi <= 0.5:
            raise ConfigError(f"search box {search} must lie inside Q = [-1/2, 1/2]^3")
    grid = grid or (config.grid() if config else build_grid())
    ep = solve_eigenpair(grid)
    if w_a is None:
        cube = calibrate_cube(lambda0, grid, ep, w_lambda=w_lambda, dt_factor=dt_factor)
    else:
        cube = DeskCube(lambda0, w_lambda, w_a, w_a)
    kw = dict(horizon_efolds=horizon_efolds, dt_factor=dt_factor)
    axes = [np.linspace(lo, hi, levels) for lo, hi in search]
    landscape = [shoot_point(p, cube, grid, ep, **kw) for p in itertools.product(*axes)]
    if all(r["first_check"] for r in landscape):
        raise RegimeError("every cube point exits immediately; T not deep enough")
    # nested bisection: p2 at each (p0, p1) slice, keep the latest exit
    best, evals = None, []
    for p0v in axes[0]:
        for p1v in axes[1]:
            b, ev = _bisect_p2(p0v, p1v, cube, grid, ep, search[2][0], search[2][1], iters, **kw)
            evals += ev
            if best is None or b["exit_time"] > best["exit_time"]:
                best = b
    pb = np.array(best["p"])
    neigh = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        if d == (0, 0, 0):
            continue
        q = np.clip(pb + probe * np.array(d), -0.5, 0.5)
        neigh.append(shoot_point(tuple(q), cube, grid, ep, **kw))
    strict = all(best["exit_time"] > r["exit_time"] for r in neigh)
    # boundary faces
    faces = []
    for k in range(3):
        for sgn in (-1, 1):
            p = np.zeros(3)
            p[k] = 0.5 * sgn
            r = shoot_point(tuple(p), cube, grid, ep, **kw)
            faces.append({**r, "expected": ("+" if sgn > 0 else "-") + FACES[k]})
    own_face = all(f["exit_face"] == f["expected"] for f in faces)
    return {"T": T, "T0": T0, "lambda0": lambda0, "landscape": landscape, "bisection": evals, "best": best,
            "neighbors": neigh, "strict_max": strict, "boundary": faces, "own_face": own_face,
            "cube": asdict(cube), "horizon_efolds": horizon_efolds}


SHOOT_COLUMNS = ("p0", "p1", "p2", "exit_time", "exit_face")
