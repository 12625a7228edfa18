"""Command line: constants, eigen, check, ode, simulate, shoot.

Configuration comes from an optional `key = value` file plus `--set key=value`
overrides; both are validated against RunConfig.  Every output starts with a
header carrying the resolved configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .radial_core import ConfigError, Grading, build_grid

FORMAT_VERSION = 1
SUBCOMMANDS = ("constants", "eigen", "check", "ode", "simulate", "shoot")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = "check"
    N: int = 13
    n_nodes: int = 2048
    r_max: float = 200.0
    stretch: float = 7.6
    seed: int = 0
    output: str = "-"
    tol_scale: float = 1.0
    C_tilde: float | None = None
    samples: int = 20000

    def grid(self):
        return build_grid(self.N, self.r_max, self.n_nodes, Grading(stretch=self.stretch))

    def module_seed(self, name: str) -> int:
        """Deterministic per-module seed split from the run seed."""
        return int(np.random.SeedSequence([self.seed, sum(map(ord, name))]).generate_state(1)[0])


_DOMAINS = {
    "subcommand": f"one of {SUBCOMMANDS}",
    "N": "integer >= 13",
    "n_nodes": "integer >= 64",
    "r_max": "positive real",
    "stretch": "positive real",
    "seed": "non-negative integer",
    "output": "path or '-'",
    "tol_scale": "positive real",
    "C_tilde": "positive real",
    "samples": "integer >= 100",
}


def _coerce(key, value):
    dom = _DOMAINS[key]
    try:
        if key in ("N", "n_nodes", "seed", "samples"):
            v = int(value)
        elif key in ("r_max", "stretch", "tol_scale", "C_tilde"):
            v = float(value)
            if not (np.isfinite(v) and v > 0):
                raise ValueError
        else:
            v = str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}={value!r}: expected {dom}") from None
    bad = ((key == "N" and v < 13) or (key == "n_nodes" and v < 64) or (key == "seed" and v < 0)
           or (key == "samples" and v < 100) or (key == "subcommand" and v not in SUBCOMMANDS))
    if bad:
        extra = " (the construction requires N >= 13)" if key == "N" else ""
        raise ConfigError(f"{key}={value!r}: expected {dom}{extra}")
    return v


def _pairs_from_text(text: str, origin: str):
    out = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{ln}: expected key = value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out.append((k, v, f"{origin}:{ln}"))
    return out


def parse_config(path: str | None = None, overrides=(), subcommand: str | None = None, **flags) -> RunConfig:
    """Resolve defaults < config file < overrides < explicit flags.

    Unknown keys and keys repeated within the file or within the overrides are
    errors.
    """
    entries = []
    if path:
        with open(path) as fh:
            entries += [("file", *e) for e in _pairs_from_text(fh.read(), path)]
    for i, item in enumerate(overrides):
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        entries.append(("override", k, v, f"--set #{i + 1}"))
    known = {f.name for f in fields(RunConfig)}
    seen: dict = {}
    values = {}
    for src, k, v, where in entries:
        if k not in known:
            raise ConfigError(f"unknown key {k!r} (value {v!r}) at {where}; known keys: {sorted(known)}")
        if (src, k) in seen:
            raise ConfigError(f"duplicate key {k!r}: {seen[(src, k)]} and {where}")
        seen[(src, k)] = where
        values[k] = _coerce(k, v)
    for k, v in flags.items():
        if v is not None:
            if k not in known:
                raise ConfigError(f"unknown key {k!r}")
            values[k] = _coerce(k, v)
    if subcommand is not None:
        values["subcommand"] = _coerce("subcommand", subcommand)
    return RunConfig(**values)


# -- check registry ------------------------------------------------------------------

@dataclass
class Check:
    id: str
    module: str
    paper_ref: str
    fn: object = field(repr=False)


REGISTRY: list[Check] = []


def register(id, module, paper_ref):
    def deco(fn):
        REGISTRY.append(Check(id, module, paper_ref, fn))
        return fn
    return deco


def _rec(measured, tolerance, ok=None, cmp="<"):
    measured = float(measured)
    if ok is None:
        ok = measured < tolerance if cmp == "<" else measured > tolerance
    return {"measured": measured, "tolerance": tolerance, "pass": bool(ok)}


class _Ctx:
    """Lazily shared grid, eigenpair and constants for one suite run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._grid = self._ep = self._c = None

    @property
    def grid(self):
        if self._grid is None:
            self._grid = self.cfg.grid()
        return self._grid

    @property
    def ep(self):
        if self._ep is None:
            from .linearized import solve_eigenpair
            self._ep = solve_eigenpair(self.grid)
        return self._ep

    @property
    def constants(self):
        if self._c is None:
            from .ground_state import closed_form_constants
            self._c = closed_form_constants(self.cfg.N)
        return self._c


@register("grid_gaussian_moment", "radial_core", "weighted quadrature of exp(-r^2)")
def _chk_grid(ctx):
    g = ctx.grid
    exact = np.pi ** (g.N / 2)
    return _rec(abs(g.integrate(np.exp(-g.r ** 2)) / exact - 1), 1e-10 * ctx.cfg.tol_scale)


@register("ground_state_residual", "ground_state", "ground-state equation residual on [0.01, 50]")
def _chk_gs(ctx):
    from .ground_state import ground_state_residual
    return _rec(ground_state_residual(ctx.grid), 1e-5 * ctx.cfg.tol_scale)


@register("constants_quadrature", "ground_state", "Beta-function closed forms of the W integrals")
def _chk_const(ctx):
    from .ground_state import quadrature_audit
    worst = max(a.rel_error for a in quadrature_audit(ctx.cfg.N, ctx.grid))
    return _rec(worst, 1e-8 * ctx.cfg.tol_scale)


@register("c_tilde_identity", "ground_state", "closed-form rate constant of the scale law")
def _chk_ct(ctx):
    from .ground_state import c_tilde_residual
    return _rec(c_tilde_residual(ctx.constants, ctx.cfg.C_tilde), 1e-10 * ctx.cfg.tol_scale)


@register("inequalities_finite", "nonlinearity", "pointwise nonlinearity estimates")
def _chk_ineq(ctx):
    from .nonlinearity import INEQUALITY_IDS, taylor_inequality_check
    seed = ctx.cfg.module_seed("nonlinearity")
    vals = [taylor_inequality_check(i, ctx.cfg.samples, seed, ctx.cfg.N).fitted_constant for i in INEQUALITY_IDS]
    worst = max(vals)
    return _rec(worst, np.inf, ok=bool(np.all(np.isfinite(vals))))


@register("eigenpair_residual", "linearized", "unstable eigenpair of the linearized operator")
def _chk_eig(ctx):
    ep = ctx.ep
    res = ep.residuals()
    return _rec(max(res.values()), 1e-6 * ctx.cfg.tol_scale, ok=max(res.values()) < 1e-6 and ep.nu > 0)


@register("kernel_orthogonality", "linearized", "kernel elements and eigenfunction orthogonality")
def _chk_orth(ctx):
    from .linearized import orthogonality_report
    rep = orthogonality_report(ctx.ep)
    worst = max(abs(rep["W_Y1_cos"]), abs(rep["LW_Y2_cos"]), rep["Lminus_W"], rep["Lplus_LW"])
    return _rec(worst, 1e-5 * ctx.cfg.tol_scale, ok=worst < 1e-5 and rep["Y1_Y2"] > 0)


@register("coercivity", "linearized", "projected quadratic forms are positive")
def _chk_coer(ctx):
    from .linearized import FORM_IDS, coercivity_min_eig
    vals = [coercivity_min_eig(f, grid=ctx.grid, ep=ctx.ep).min_eigenvalue_projected for f in FORM_IDS]
    return _rec(min(vals), 0.0, cmp=">")


@register("cutoff_invariants", "virial", "cutoff weight properties for (c, R) in {0.1, 0.01} x {1, 5, 10}")
def _chk_q(ctx):
    from .virial import build_q
    failed = 0
    for c in (0.1, 0.01):
        for R in (1.0, 5.0, 10.0):
            q = build_q(c, R, ctx.cfg.N, strict=False)
            failed += sum(not v["pass"] for v in q.audit.values())
    return _rec(failed, 1, ok=failed == 0)


@register("virial_identity", "virial", "integration-by-parts identity for the localized virial")
def _chk_vid(ctx):
    from .virial import _smooth_profile, build_q, virial_audit
    q = build_q(0.01, 10.0, ctx.cfg.N, strict=False)
    rng = np.random.default_rng(ctx.cfg.module_seed("virial"))
    worst = max(virial_audit(1.0, _smooth_profile(ctx.grid.r, rng), q, ctx.grid)["relative_difference"]
                for _ in range(5))
    return _rec(worst, 1e-4 * ctx.cfg.tol_scale)


@register("virial_antisymmetry", "virial", "antisymmetry of the mass-corrected virial operator")
def _chk_anti(ctx):
    from .virial import antisymmetry_check, build_q
    q = build_q(0.01, 10.0, ctx.cfg.N, strict=False)
    return _rec(antisymmetry_check(0.2, q, ctx.grid, 100, ctx.cfg.module_seed("virial"))["max_relative"],
                1e-8 * ctx.cfg.tol_scale)


@register("virial_scaling", "virial", "scaling covariance of the virial operators")
def _chk_scal(ctx):
    from .virial import build_q, scaling_check
    q = build_q(0.01, 10.0, ctx.cfg.N, strict=False)
    return _rec(max(scaling_check(l, q, ctx.grid)["max"] for l in (0.05, 0.2, 1.0)), 1e-8 * ctx.cfg.tol_scale)


@register("closed_form_scale_law", "modulation", "closed-form scale law solves the leading ODE")
def _chk_cf(ctx):
    from .modulation import closed_form_residual
    return _rec(closed_form_residual(ctx.constants, [-10.0, -100.0, -1000.0], ctx.cfg.C_tilde),
                1e-10 * ctx.cfg.tol_scale)


@register("reduced_tracking", "modulation", "reduced ODE tracks the closed form")
def _chk_red(ctx):
    from .modulation import BubbleParams, ReducedState, closed_form_lambda, integrate_reduced
    c = ctx.constants
    ts = -np.logspace(4, 2, 50)
    s0 = ReducedState(-1e4, BubbleParams(-np.pi / 2, 1.0, 0.0, float(closed_form_lambda(-1e4, c))), 1e-30, 1e-30)
    tr = integrate_reduced(-1e4, -1e2, s0, c, 793.0, t_eval=ts)
    return _rec(np.max(np.abs(tr.column("lam") / closed_form_lambda(ts, c) - 1)), 1e-6 * ctx.cfg.tol_scale)


@register("initial_data_roundtrip", "modulation", "initial-data construction round trip")
def _chk_init(ctx):
    from .linearized import alpha_project, solve_eigenpair
    from .modulation import initial_data, orthogonality_residuals
    from .radial_core import grid_for_scale
    c = ctx.constants
    T = -1e3
    lam0 = c.C_tilde * abs(T) ** (-2 / (c.N - 12))
    g = grid_for_scale(lam0, c.N, ctx.cfg.r_max, ctx.cfg.n_nodes)
    ep = solve_eigenpair(g)
    a = 0.3 * abs(T) ** (-c.N / (2 * (c.N - 12)))
    d = initial_data(T, lam0, a, -a, g, ep, c=c)
    p = d.params
    orth = np.max(np.abs(orthogonality_residuals(g, p, d.g0))) / g.norm(d.g0)
    sp = np.array([*alpha_project(p.zeta, p.mu, d.g0, ep), *alpha_project(p.theta, p.lam, d.g0, ep)])
    spectral = np.max(np.abs(sp - [a, 0, -a, 0])) / a
    return _rec(max(orth, spectral), 1e-8 * ctx.cfg.tol_scale)


@register("cube_inverse", "modulation", "cube coordinate map inverse consistency")
def _chk_cube(ctx):
    from .modulation import cube_coords, cube_point
    c = ctx.constants
    rng = np.random.default_rng(ctx.cfg.module_seed("modulation"))
    worst = 0.0
    for _ in range(50):
        t = -10 ** rng.uniform(1, 4)
        p = rng.uniform(-0.5, 0.5, 3)
        back = cube_coords(t, *cube_point(t, p, c), c)
        worst = max(worst, float(np.max(np.abs(np.array(back) - p))))
    return _rec(worst, 1e-12 * ctx.cfg.tol_scale)


@register("mass_conservation", "simulator", "mass conservation of the split-step scheme")
def _chk_mass(ctx):
    from .ground_state import W_profile
    from .simulator import SimConfig, conservation_audit, run
    g = ctx.grid
    u0 = 0.5 * W_profile(g.r, g.N, 4.0)
    tr = run(u0, SimConfig(N=g.N, r_max=g.r_max, n_nodes=g.n, t_start=-0.1, t_end=0.0, dt=1e-4,
                           output_stride=100), grid=g)
    return _rec(conservation_audit(tr)["mass_drift"], 1e-10 * ctx.cfg.tol_scale)


@register("scaling_conjugacy", "simulator", "scaling conjugacy of the flow")
def _chk_conj(ctx):
    from .simulator import conjugacy_check
    return _rec(conjugacy_check(ctx.grid, 0.5, 1e-3, 1e-6)["relative_gap"], 1e-5 * ctx.cfg.tol_scale)


def run_suite(cfg: RunConfig, only=None, emit=None) -> tuple[int, list]:
    """Run the registered checks (optionally restricted to modules or ids); exit status and records."""
    only = set(only or ())
    known = {c.module for c in REGISTRY} | {c.id for c in REGISTRY}
    unknown = only - known
    if unknown:
        raise ConfigError(f"--only {sorted(unknown)}: expected modules or check ids from {sorted(known)}")
    ctx = _Ctx(cfg)
    records = []
    for chk in REGISTRY:
        if only and chk.module not in only and chk.id not in only:
            continue
        try:
            r = chk.fn(ctx)
        except Exception as e:  # a crashing check is a failing check
            r = {"measured": None, "tolerance": None, "pass": False, "error": f"{type(e).__name__}: {e}"}
        rec = {"id": chk.id, "module": chk.module, "paper_ref": chk.paper_ref, **r}
        records.append(rec)
        if emit:
            emit(rec)
    return (0 if all(r["pass"] for r in records) else 1), records


# -- subcommands -----------------------------------------------------------------------

def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def _header(cfg, kind, extra=None):
    d = {"format": f"twobubble-{kind}", "version": FORMAT_VERSION, "config": asdict(cfg)}
    if extra:
        d.update(extra)
    return d


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_csv(path, header, columns, rows):
    fh = _open_out(path)
    try:
        fh.write("# " + json.dumps(header, default=_json_default, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _write_json(path, obj):
    fh = _open_out(path)
    try:
        fh.write(json.dumps(obj, default=_json_default, sort_keys=True, indent=1) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_constants(cfg, args):
    from .ground_state import closed_form_constants, quadrature_audit
    c = closed_form_constants(cfg.N)
    audit = [asdict(a) for a in quadrature_audit(cfg.N, cfg.grid())]
    _write_json(cfg.output, {**_header(cfg, "constants"), "constants": c.as_dict(), "quadrature": audit})
    return 0


def cmd_eigen(cfg, args):
    from .linearized import orthogonality_report, solve_eigenpair
    rep = orthogonality_report(solve_eigenpair(cfg.grid()))
    _write_json(cfg.output, {**_header(cfg, "eigen"), **rep})
    return 0


def cmd_check(cfg, args):
    fh = _open_out(cfg.output)

    def emit(rec):
        fh.write(json.dumps(rec, default=_json_default, sort_keys=True) + "\n")
        fh.flush()

    try:
        fh.write(json.dumps(_header(cfg, "check"), default=_json_default, sort_keys=True) + "\n")
        status, _ = run_suite(cfg, args.only, emit)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return status


ODE_COLUMNS = ("t", "lambda", "theta", "a1p", "a1m", "a2p", "a2m", "lambda_closed_form")


def cmd_ode(cfg, args):
    from .ground_state import closed_form_constants
    from .linearized import solve_eigenpair
    from .modulation import BubbleParams, ReducedState, closed_form_lambda, integrate_reduced
    c = closed_form_constants(cfg.N)
    nu = args.nu if args.nu is not None else solve_eigenpair(cfg.grid()).nu
    lam0 = float(closed_form_lambda(args.t0, c, args.coupling))
    s0 = ReducedState(args.t0, BubbleParams(-np.pi / 2, 1.0, args.theta0, lam0), args.a2p0, 0.0,
                      K_forcing=args.forcing)
    ts = np.linspace(args.t0, args.t1, args.points)
    tr = integrate_reduced(args.t0, args.t1, s0, c, nu, t_eval=ts, coupling=args.coupling)
    rows = [[s.t, s.params.lam, s.params.theta, s.a1_plus, s.a1_minus, s.a2_plus, s.a2_minus,
             float(closed_form_lambda(s.t, c, args.coupling))] for s in tr.states]
    _write_csv(cfg.output, _header(cfg, "ode", {"args": vars(args), "nu": nu, "status": tr.status}), ODE_COLUMNS, rows)
    return 0 if tr.status in ("ok", "overflow") else 1


def cmd_simulate(cfg, args):
    from .simulator import TRAJECTORY_COLUMNS, two_bubble_experiment
    rep = two_bubble_experiment(args.T, args.lambda0, args.a1, args.a2, grid=cfg.grid(), window=args.window,
                                coupling=args.coupling)
    tr = rep["trajectory"]
    summary = {k: rep[k] for k in ("T", "lambda0", "coupling", "dt", "status", "reason", "frames",
                                   "lambda_max_gap", "delta_lambda_ratio", "lambda_rate_fit", "theta_rate_fit",
                                   "psi_fit")}
    _write_csv(cfg.output, _header(cfg, "trajectory", {"summary": summary}), TRAJECTORY_COLUMNS, tr.rows())
    return 0


def cmd_shoot(cfg, args):
    from .simulator import SHOOT_COLUMNS, shoot
    rep = shoot(args.T, args.T0, lambda0=args.lambda0, levels=args.levels, iters=args.iters,
                horizon_efolds=args.horizon, grid=cfg.grid())
    rows = [[*r["p"], r["exit_time"], r["exit_face"]] for r in rep["landscape"] + rep["bisection"]
            + rep["neighbors"] + rep["boundary"]]
    summary = {"best": rep["best"], "strict_max": rep["strict_max"], "own_face": rep["own_face"]}
    _write_csv(cfg.output, _header(cfg, "shoot", {"summary": summary}), SHOOT_COLUMNS, rows)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="twobubble", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--N", type=int)
    common.add_argument("--n-nodes", dest="n_nodes", type=int)
    common.add_argument("--r-max", dest="r_max", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("-o", "--output")
    sub = ap.add_subparsers(dest="cmd", required=True)
    sub.add_parser("constants", parents=[common])
    sub.add_parser("eigen", parents=[common])
    p = sub.add_parser("check", parents=[common])
    p.add_argument("--only", action="append", help="module name or check id (repeatable)")
    p = sub.add_parser("ode", parents=[common])
    p.add_argument("--t0", type=float, default=-1e4)
    p.add_argument("--t1", type=float, default=-1e2)
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--a2p0", type=float, default=0.0)
    p.add_argument("--forcing", type=float, default=0.0)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=None, help="skip the eigen solve")
    p.add_argument("--points", type=int, default=200)
    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--lambda0", type=float, default=0.05)
    p.add_argument("--a1", type=float, default=0.0)
    p.add_argument("--a2", type=float, default=0.0)
    p.add_argument("--window", type=float, default=8.0)
    p.add_argument("--coupling", type=float, default=None)
    p = sub.add_parser("shoot", parents=[common])
    p.add_argument("--T", type=float, default=-1.0)
    p.add_argument("--T0", type=float, default=0.0)
    p.add_argument("--lambda0", type=float, default=0.05)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--iters", type=int, default=12)
    p.add_argument("--horizon", type=float, default=25.0)
    return ap


COMMANDS = {"constants": cmd_constants, "eigen": cmd_eigen, "check": cmd_check, "ode": cmd_ode,
            "simulate": cmd_simulate, "shoot": cmd_shoot}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.set, subcommand=args.cmd, N=args.N, n_nodes=args.n_nodes,
                           r_max=args.r_max, seed=args.seed, output=args.output)
        return COMMANDS[args.cmd](cfg, args)
    except ConfigError as e:
        print(f"twobubble: configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
