import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twobubble import simulator as S
from twobubble.ground_state import C_N, W_field, W_profile
from twobubble.radial_core import ConfigError, RadialField, build_grid


@pytest.fixture(scope="module")
def small():
    return build_grid(n_nodes=256, r_max=30.0)


def test_config_validation():
    S.SimConfig()
    for kw in (dict(t_start=0.0, t_end=-1.0), dict(t_end=0.5, t_start=0.0), dict(dt=0.0),
               dict(output_stride=0), dict(lambda_min=0.1, dt=1e-4)):
        with pytest.raises(ConfigError):
            S.SimConfig(**kw)
    assert S.SimConfig(stretch=8.0).grid().grading.stretch == 8.0


def test_resolved_dt():
    assert S.resolved_dt(0.1) == pytest.approx(0.02 * 1e-4 / C_N(13) ** (8 / 9))


def test_linear_part_converges_at_second_order(small):
    # amplitude so small that the phase rotation is below roundoff: a pure Crank-Nicolson run.
    # A dense eigendecomposition is useless as a reference here: the weak-form bilaplacian has
    # condition ~1e21 from the r^{N-1} weights near the origin.
    u0 = 1e-30 * np.exp(-small.r ** 2).astype(complex)
    t = 1e-3

    def evolve(n):
        u = u0.copy()
        for _ in range(n):
            u = S.step(u, t / n, small)
        return u
    ref = evolve(1280)
    e1 = small.norm(evolve(20) - ref)
    e2 = small.norm(evolve(40) - ref)
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.1)


def test_strang_second_order_nonlinear(small):
    u0 = 0.5 * W_profile(small.r).astype(complex)
    t = 2e-4

    def evolve(n):
        u = u0.copy()
        for _ in range(n):
            u = S.step(u, t / n, small)
        return u
    ref = evolve(640)
    e1 = small.norm(evolve(20) - ref)
    e2 = small.norm(evolve(40) - ref)
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.2)


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(0.01, 1.0), width=st.floats(0.5, 3.0), phase=st.floats(0, 6.28))
def test_mass_is_conserved_per_step(small, amp, width, phase):
    u = amp * C_N(13) * np.exp(1j * phase - (small.r / width) ** 2)
    m0 = small.norm(u)
    for _ in range(5):
        u = S.step(u, 1e-5, small)
    assert small.norm(u) == pytest.approx(m0, rel=1e-12)


def test_step_accepts_field_and_rejects_bad_input(small):
    f = W_field(small)
    out = S.step(f, 1e-6)
    assert isinstance(out, RadialField)
    with pytest.raises(ConfigError):
        S.step(f.values, 1e-6)
    with pytest.raises(S.NumericalError):
        S.step(np.full(small.n, np.nan), 1e-6, small)


def test_run_records_and_rows(small):
    cfg = S.SimConfig(N=13, r_max=30.0, n_nodes=256, t_start=-1e-3, t_end=0.0, dt=1e-4, output_stride=5)
    tr = S.run(0.5 * W_profile(small.r), cfg, grid=small)
    assert tr.status == "complete"
    assert len(tr.times) == 3
    rows = tr.rows()
    assert len(rows[0]) == len(S.TRAJECTORY_COLUMNS)
    aud = S.conservation_audit(tr)
    assert aud["mass_drift"] < 1e-12
    assert aud["samples"] == 3


def test_run_requires_guess_for_decomposition(small):
    cfg = S.SimConfig(N=13, r_max=30.0, n_nodes=256, t_start=-1e-3, dt=1e-4, decomposition=True)
    with pytest.raises(ConfigError):
        S.run(W_profile(small.r), cfg, grid=small)


def test_monitor_stops_run(small):
    cfg = S.SimConfig(N=13, r_max=30.0, n_nodes=256, t_start=-1e-3, dt=1e-4, output_stride=1)
    tr = S.run(0.5 * W_profile(small.r), cfg, grid=small, monitor=lambda t, u, fr: "halt" if t > -7e-4 else None)
    assert tr.status == "stopped" and tr.reason == "halt"


def test_conjugacy(grid):
    assert S.conjugacy_check(grid, lam=0.5, horizon=1e-4, dt=1e-6)["relative_gap"] < 1e-5


def test_W_stays_put_for_short_times(grid):
    assert S.stationarity_window(grid, 1e-6, tol=1e-5, t_max=5e-4) >= 5e-4


def test_fit_holdout():
    x = np.arange(1.0, 9.0)
    assert S._fit_holdout(x, 2 * x)["pass"]
    assert not S._fit_holdout(x, x ** 3)["pass"]
    assert not S._fit_holdout(x[:2], x[:2])["pass"]


def test_desk_cube_and_faces():
    cube = S.DeskCube(0.05)
    lam, a1, a2 = cube.point((0.5, -0.5, 0.25))
    assert lam == pytest.approx(0.05 * 1.01) and a1 == -5e-5 and a2 == 2.5e-5
    assert S._exit_face((0.1, -0.6, 0.2)) == "-p1"
    assert S._exit_face((0.1, 0.2, 0.3)) is None


def test_shoot_argument_checks():
    with pytest.raises(ConfigError):
        S.shoot(-1.0, -2.0)
    with pytest.raises(ConfigError):
        S.shoot(-2.0, -1.0, search=((-0.6, 0.4),) * 3)
