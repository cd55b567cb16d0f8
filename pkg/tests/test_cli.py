import json

import numpy as np
import pytest

from hartree_lab import acceptance, cli
from hartree_lab.config import SCHEMA, RunConfig, env_key, env_overrides, load, parse, serialize
from hartree_lab.errors import HartreeError
from hartree_lab.fieldio import (OutputDir, csv_text, field_bytes, field_from_bytes, read_field, verify_manifest,
                                 write_field)
from hartree_lab.radial_core import RadialField, build_grid


# configuration

def test_defaults_round_trip():
    cfg = RunConfig()
    text = serialize(cfg)
    assert parse(text).values == cfg.values
    assert serialize(parse(text)) == text
    assert len(text.splitlines()) == len(SCHEMA)


def test_parse_with_comments_and_lists():
    cfg = parse("# run\ngrid.n = 512  # coarse\nphysics.virial_radii = 5, 10,20\nevolve.modulate = no\n")
    assert cfg["grid.n"] == 512
    assert cfg["physics.virial_radii"] == (5.0, 10.0, 20.0)
    assert cfg["evolve.modulate"] is False
    assert parse(serialize(cfg)).values == cfg.values


@pytest.mark.parametrize("text", ["grid.n = 8", "grid.nn = 3", "grid.n = 512\ngrid.n = 256", "grid.n 512",
                                  "grid.r_min = 10\ngrid.r_max = 1", "grid.dt = abc", "integrator.dt = nan",
                                  "physics.virial_radii = 600", "initial.kind = file", "spectrum.oracles = qr",
                                  "run.seed = -1", "integrator.direction = 0", "grid.grading = chebyshev"])
def test_invalid_configs(text):
    with pytest.raises(HartreeError) as exc:
        parse(text)
    assert exc.value.code == "config-invalid"


def test_env_names_and_precedence(tmp_path):
    assert env_key("grid.r_min") == "HARTREE_GRID_R_MIN"
    path = tmp_path / "run.cfg"
    path.write_text("grid.n = 512\nintegrator.T = 0.5\nrun.seed = 3\n")
    environ = {"HARTREE_GRID_N": "768", "HARTREE_INTEGRATOR_T": "0.25", "PATH": "/bin"}
    cfg = load(str(path), environ=environ, overrides={"grid.n": "640"})
    assert cfg["grid.n"] == 640          # explicit beats environment
    assert cfg["integrator.T"] == 0.25   # environment beats file
    assert cfg["run.seed"] == 3          # file beats default


def test_unknown_environment_override():
    with pytest.raises(HartreeError) as exc:
        env_overrides({"HARTREE_GRID_SIZE": "3"})
    assert exc.value.code == "config-invalid"


def test_missing_config_file(tmp_path):
    with pytest.raises(HartreeError) as exc:
        load(str(tmp_path / "absent.cfg"), environ={})
    assert exc.value.code == "config-invalid"


def test_auto_t0():
    assert RunConfig().t0(4.0) == 0.5
    assert RunConfig().with_overrides({"physics.t0": "0.7"}).t0(4.0) == 0.7


# field files and tables

@pytest.fixture(scope="module")
def small_grid():
    return build_grid(5, 1e-2, 50.0, 96)


def test_field_round_trip(tmp_path, small_grid):
    rng = np.random.default_rng(5)
    u = RadialField(small_grid, rng.normal(size=96) + 1j * rng.normal(size=96))
    write_field(tmp_path / "u.field", u)
    back = read_field(tmp_path / "u.field")
    assert np.array_equal(back.values, u.values)
    assert np.array_equal(back.grid.nodes, small_grid.nodes)
    assert np.array_equal(read_field(tmp_path / "u.field", small_grid).values, u.values)


def test_field_errors(tmp_path, small_grid):
    blob = field_bytes(RadialField(small_grid, np.zeros(96)))
    with pytest.raises(HartreeError) as exc:
        field_from_bytes(blob[:-8])
    assert exc.value.code == "field-file-invalid"
    with pytest.raises(HartreeError) as exc:
        field_from_bytes(blob, build_grid(5, 1e-2, 50.0, 128))
    assert exc.value.code == "grid-mismatch"
    with pytest.raises(HartreeError) as exc:
        read_field(tmp_path / "missing.field")
    assert exc.value.code == "field-file-invalid"


def test_csv_is_exact_and_deterministic():
    rows = [(0.1, 1 / 3, "trapped"), (2, np.float64(1e-17), "x")]
    text = csv_text(("a", "b", "flag"), rows)
    assert text == csv_text(("a", "b", "flag"), rows)
    assert text.splitlines()[1] == "0.1,0.3333333333333333,trapped"


def test_manifest_checksums(tmp_path):
    out = OutputDir(tmp_path)
    out.write("a.csv", "x\n1\n")
    out.write("b.bin", b"\x00\x01")
    path = out.write_manifest({"subcommand": "test"})
    body = json.loads(path.read_text())
    assert set(body["files"]) == {"a.csv", "b.bin"}
    assert verify_manifest(path) == []
    (tmp_path / "a.csv").write_text("tampered\n")
    assert verify_manifest(path) == ["a.csv"]
    assert not (tmp_path / "manifest.json.tmp").exists()


# subcommands

def _run(tmp_path, name, *extra):
    out = tmp_path / name
    status = cli.main([name, "--out", str(out), *extra])
    return status, out


def _manifest(out):
    body = json.loads((out / "manifest.json").read_text())
    assert verify_manifest(out / "manifest.json") == []
    emitted = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert emitted == set(body["files"])
    return body


def test_ground_state_command(tmp_path):
    status, out = _run(tmp_path, "ground-state")
    assert status == 0
    body = _manifest(out)
    assert body["derived"]["c0"] == pytest.approx(0.9836, abs=1e-4)
    assert body["subcommand"] == "ground-state"
    assert (out / "ground_state.csv").read_text().startswith("r,W,Wtilde,residual\n")


def test_evolve_command_and_determinism(tmp_path):
    args = ["--set", "integrator.T=0.01", "--set", "integrator.dt=0.001", "--set", "integrator.cadence=5"]
    s1, out1 = _run(tmp_path / "one", "evolve", *args)
    s2, out2 = _run(tmp_path / "two", "evolve", *args)
    assert s1 == s2 == 0
    a = (out1 / "trajectory.csv").read_bytes()
    assert a == (out2 / "trajectory.csv").read_bytes()
    flags = {line.rsplit(",", 1)[1] for line in a.decode().splitlines()[1:]}
    assert flags == {"trapped"}
    assert _manifest(out1)["config_hash"] == _manifest(out2)["config_hash"]


def test_modulate_command_reads_field(tmp_path):
    status, out = _run(tmp_path, "ground-state")
    assert status == 0
    status, mod = _run(tmp_path, "modulate", "--input", str(out / "W.field"))
    assert status == 0
    fit = json.loads((mod / "modulation.json").read_text())
    assert abs(fit["theta"]) <= 1e-10 and fit["mu"] == pytest.approx(1.0, abs=1e-10)


def test_modulate_without_input(tmp_path):
    assert _run(tmp_path, "modulate")[0] == 2


def test_spectrum_command(tmp_path):
    status, out = _run(tmp_path, "spectrum", "--set", "spectrum.oracles=pencil,sqrt")
    assert status == 0
    body = json.loads((out / "spectrum.json").read_text())
    assert body["e0"] == pytest.approx(3.8169, rel=1e-3)
    assert body["coercivity"]["H-perp"] > 0 > body["coercivity"]["unconstrained"]
    assert _manifest(out)["derived"]["e0"] == body["e0"]


def test_construct_wpm_with_chained_evolve(tmp_path):
    status, out = _run(tmp_path, "construct-wpm", "--set", "physics.a=-1", "--set", "construct.evolve=true",
                       "--set", "integrator.T=0.01", "--set", "integrator.dt=0.001")
    assert status == 0
    report = json.loads((out / "wpm_report.json").read_text())
    assert report["gradient_gap"] < 0
    assert {"wpm.field", "evolve_trajectory.csv", "evolve_final.field"} <= set(_manifest(out)["files"])


def test_virial_command(tmp_path):
    status, out = _run(tmp_path, "virial", "--set", "physics.virial_radii=5,10")
    assert status == 0
    lines = (out / "virial.csv").read_text().splitlines()
    assert lines[0] == "R,V_R,dtV_R,d2tV_R,A_R,delta,bound_holds"
    assert len(lines) == 3


def test_kelvin_command(tmp_path):
    status, out = _run(tmp_path, "kelvin-check")
    assert status == 0
    body = json.loads((out / "kelvin.json").read_text())
    assert body["kelvin_W"] <= 1e-8 and body["tail_relative_error"] <= 0.02


def test_acceptance_command_exit_status(tmp_path, monkeypatch):
    fake = [acceptance.CriterionResult(1, "a", {"x": True}, "ok"),
            acceptance.CriterionResult(2, "b", {"y": False}, "bad")]
    monkeypatch.setattr(acceptance, "run_all", lambda lab, report: [report(r.line()) or r for r in fake])
    status, out = _run(tmp_path, "acceptance")
    assert status == 1
    assert (out / "acceptance.txt").read_text().splitlines()[1].startswith("FAIL criterion  2")
    assert _manifest(out)["derived"]["failed"] == [2]


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert _run(tmp_path, "ground-state", "--set", "grid.n=8")[0] == 2
    assert _run(tmp_path, "ground-state", "--set", "grid.n")[0] == 2
    monkeypatch.setenv("HARTREE_GRID_N", "abc")
    assert _run(tmp_path, "ground-state")[0] == 2
    monkeypatch.delenv("HARTREE_GRID_N")
    # a coarse grid calibrates with a large residual: a numerical failure
    assert _run(tmp_path, "ground-state", "--set", "grid.n=64")[0] == 3
    err = capsys.readouterr().err
    assert "ground-state/residual-too-large" in err and "cli-io/config-invalid" in err


def test_seed_must_be_unsigned_64_bit(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["ground-state", "--out", str(tmp_path), "--seed", str(2 ** 64)])
