import csv
import io
import json

import pytest

from twobubble import cli
from twobubble.ground_state import closed_form_constants
from twobubble.radial_core import ConfigError


def test_defaults_and_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nN = 14\nseed = 3  # trailing\nsamples = 500\n")
    cfg = cli.parse_config(str(f), ["seed=5"], subcommand="ode", samples=200)
    assert (cfg.N, cfg.seed, cfg.samples, cfg.subcommand) == (14, 5, 200, "ode")
    assert cli.parse_config() == cli.RunConfig()


def test_duplicate_key_reports_both_locations(tmp_path):
    f = tmp_path / "dup.cfg"
    f.write_text("seed = 1\n\nseed = 2\n")
    with pytest.raises(ConfigError, match=r"dup.cfg:1.*dup.cfg:3"):
        cli.parse_config(str(f))
    with pytest.raises(ConfigError, match="duplicate"):
        cli.parse_config(overrides=["N=13", "N=14"])


@pytest.mark.parametrize("item,msg", [("colour=red", "unknown key"), ("N=12", "requires N >= 13"),
                                      ("r_max=-3", "positive real"), ("n_nodes=abc", "integer"),
                                      ("subcommand=fly", "one of"), ("novalue", "key=value")])
def test_bad_overrides(item, msg):
    with pytest.raises(ConfigError, match=msg):
        cli.parse_config(overrides=[item])


def test_module_seeds_are_distinct_and_stable():
    cfg = cli.RunConfig(seed=4)
    assert cfg.module_seed("virial") == cli.RunConfig(seed=4).module_seed("virial")
    assert cfg.module_seed("virial") != cfg.module_seed("nonlinearity")


def test_main_config_error_exit_code(capsys):
    assert cli.main(["constants", "--N", "12"]) == 2
    assert "N >= 13" in capsys.readouterr().err


def test_constants_output(tmp_path):
    out = tmp_path / "c.json"
    assert cli.main(["constants", "-o", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["format"] == "twobubble-constants" and d["config"]["N"] == 13
    assert d["constants"]["C_tilde"] == pytest.approx(closed_form_constants(13).C_tilde, rel=1e-15)
    assert all(a["rel_error"] < 1e-8 for a in d["quadrature"])


def test_ode_csv(tmp_path):
    out = tmp_path / "ode.csv"
    assert cli.main(["ode", "--nu", "793.0938", "--points", "11", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = json.loads(lines[0][2:])
    assert header["format"] == "twobubble-ode" and header["status"] == "ok"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(rows[0]) == cli.ODE_COLUMNS and len(rows) == 12
    for r in rows[1:]:
        assert float(r[1]) == pytest.approx(float(r[-1]), rel=1e-6)


def _check_records(tmp_path, *extra):
    out = tmp_path / "check.jsonl"
    code = cli.main(["check", "-o", str(out), *extra])
    lines = out.read_text().splitlines()
    return code, json.loads(lines[0]), [json.loads(x) for x in lines[1:]]


def test_check_records_shape_and_pass(tmp_path):
    code, head, recs = _check_records(tmp_path, "--only", "ground_state", "--only", "grid_gaussian_moment")
    assert head["format"] == "twobubble-check"
    assert code == 0
    assert {r["id"] for r in recs} == {"grid_gaussian_moment", "ground_state_residual",
                                       "constants_quadrature", "c_tilde_identity"}
    for r in recs:
        assert set(r) >= {"id", "module", "paper_ref", "measured", "tolerance", "pass"}


def test_check_detects_tampered_constant(tmp_path):
    c = closed_form_constants(13).C_tilde * 1.01
    code, _, recs = _check_records(tmp_path, "--only", "c_tilde_identity", "--set", f"C_tilde={c!r}")
    assert code == 1 and recs[0]["pass"] is False


def test_check_unknown_selector(tmp_path):
    assert cli.main(["check", "--only", "nothing", "-o", str(tmp_path / "x")]) == 2


def test_check_fails_on_cutoff_sign_conditions(tmp_path):
    # the fourth- and sixth-order sign conditions on the cutoff cannot all hold; the suite says so
    code, _, recs = _check_records(tmp_path, "--only", "cutoff_invariants")
    assert code == 1
    assert recs[0]["pass"] is False
