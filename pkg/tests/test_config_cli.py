import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rootlip import cli
from rootlip.config import (SCENARIOS, ConfigError, ExperimentSpec, InitialSpec, ScenarioConfig,
                            apply_overrides, load_config, parse_config)
from rootlip.initial import FAMILIES
from rootlip.solver import SolverConfig
from rootlip.transform import DomainCase

SOLVE_ARGS = ["run", "--scenario", "solve", "--case", "line", "--gamma", "2", "--kappa", "1",
              "--u0", "quadratic_plus_one", "--t-end", "0.5", "--dy", "0.125"]


def catalog_names(section):
    lines = cli.catalog().splitlines()
    start = lines.index(section) + 1
    names = []
    for line in lines[start:]:
        if not line.startswith("  "):
            break
        names.append(line.split()[0])
    return names


configs = st.builds(
    ScenarioConfig,
    scenario=st.sampled_from(SCENARIOS),
    case=st.builds(DomainCase, kind=st.sampled_from(["line", "half_line", "interval"]),
                   kappa=st.floats(0.1, 5.0), K=st.floats(1.0, 9.0), gamma=st.floats(0.0, 2.0),
                   L=st.floats(0.5, 4.0)),
    initial=st.builds(InitialSpec, family=st.sampled_from(sorted(FAMILIES)),
                      params=st.dictionaries(st.sampled_from(["a", "c", "A"]), st.floats(0.1, 2.0))),
    solver=st.builds(SolverConfig, dy=st.sampled_from([1 / 8, 1 / 16, 1 / 64]),
                     t_end=st.floats(0.01, 0.9), n_snapshots=st.integers(2, 30),
                     y_range=st.one_of(st.none(), st.tuples(st.floats(-20, -1), st.floats(1, 20)))),
    experiment=st.builds(ExperimentSpec, lam=st.floats(0.01, 0.5), n_paths=st.integers(1, 10**6)),
    override=st.booleans(),
    seed=st.integers(0, 2**31),
)


@settings(max_examples=50, deadline=None)
@given(configs)
def test_config_round_trip(cfg):
    assert parse_config(json.loads(cfg.to_json())) == cfg
    assert parse_config(cfg.to_dict()).to_json() == cfg.to_json()


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.update(kapa=1), "unknown top-level"),
    (lambda d: d["case"].update(kapa=1), "unknown key"),
    (lambda d: d["solver"].update(dt=1), "unknown key"),
    (lambda d: d.pop("spec"), "spec"),
    (lambda d: d.update(scenario="bogus"), "unknown scenario"),
    (lambda d: d["initial"].update(family="cubic"), "unknown initial family"),
    (lambda d: d["solver"].update(dy=-1), "dy"),
    (lambda d: d.update(seed=-3), "seed"),
    (lambda d: d["solver"].update(y_range=5), "list"),
])
def test_strict_parsing(mutate, match):
    d = ScenarioConfig().to_dict()
    mutate(d)
    with pytest.raises(ConfigError, match=match):
        parse_config(d)


def test_overrides_map_onto_dotted_paths():
    d = apply_overrides(ScenarioConfig().to_dict(),
                        [("kappa", "2.5"), ("solver.picard_iters", "3"), ("u0", "power_law"),
                         ("experiment.ladder", "[10, 100]")])
    cfg = parse_config(d)
    assert cfg.case.kappa == 2.5 and cfg.solver.picard_iters == 3
    assert cfg.initial.family == "power_law" and cfg.experiment.ladder == (10, 100)


def test_load_config_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_solve_example_exit_zero_and_closed_form(tmp_path):
    out = tmp_path / "run"
    assert cli.main(SOLVE_ARGS + ["--output", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "completed" and report["closed_form_rel_error"] <= 1e-3
    rows = (out / "snapshots.csv").read_text().splitlines()
    assert rows[0] == "t,y,x,v,u,du_dx,d2u_dx2"
    last = [r.split(",") for r in rows[1:] if float(r.split(",")[0]) == 0.5]
    x, u = np.array([[float(r[2]), float(r[4])] for r in last]).T
    centre = np.abs(x) < 3
    assert np.allclose(u[centre], 2 * (x[centre] ** 2 + 1), rtol=1e-3)


def test_manifest_hashes_every_file(tmp_path):
    out = tmp_path / "run"
    cli.main(SOLVE_ARGS + ["--output", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    written = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert sorted(manifest["files"]) == written
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    cfg = cli.build_config(None, SOLVE_ARGS[1:] + ["--output", str(out)])
    assert manifest["inputs"]["config"] == cli.git_blob_hash(cfg.to_json().encode())
    assert manifest["grid"]["dy"] == 0.125 and manifest["barriers"]


def test_git_blob_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert cli.git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    dirs = []
    for root in ("a", "b"):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / root))
        assert cli.main(SOLVE_ARGS) == 0
        (d,) = list((tmp_path / root).iterdir())
        dirs.append(d)
    a, b = dirs
    assert a.name == b.name
    for name in ("report.json", "diagnostics.csv", "snapshots.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    # the timestamp is the only field allowed to differ
    ma.pop("created"), mb.pop("created")
    assert ma == mb


def test_csv_dialect(tmp_path):
    out = tmp_path / "run"
    cli.main(SOLVE_ARGS + ["--output", str(out)])
    raw = (out / "diagnostics.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    assert raw.splitlines()[0] == b"t,lip_sqrt,q_ratio,d2_sup,d2_at_zero,zero_residual,barrier_margin"


def test_failed_assertion_exits_two(tmp_path, capsys):
    # a = 1/2 is not constant in the transformed variable; dy = 1 is far too coarse
    args = ["run", "--scenario", "solve", "--case", "line", "--gamma", "2", "--kappa", "1",
            "--u0", "quadratic_plus_one", "--initial.params", '{"a": 0.5}', "--t-end", "0.5",
            "--dy", "1", "--output", str(tmp_path / "r")]
    assert cli.main(args) == 2
    err = capsys.readouterr().err
    assert "assertion failed: closed_form" in err and "node" in err and "t=" in err


def test_solver_failure_exits_three(tmp_path, monkeypatch, capsys):
    import rootlip.solver as solver_mod

    monkeypatch.setattr(solver_mod, "semi_implicit_step", lambda v, *a, **k: (v, False))
    assert cli.main(SOLVE_ARGS + ["--output", str(tmp_path / "r")]) == 3
    assert "solver failure" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--kapa", "1"], ["--scenario", "nope"], ["--dy"],
                                   ["--solver.dy", "-1"], ["--t-end", "1.5"]])
def test_config_errors_exit_four_and_write_nothing(tmp_path, extra, capsys):
    out = tmp_path / "r"
    assert cli.main(SOLVE_ARGS + ["--output", str(out)] + extra) == 4
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_malformed_config_file_exits_four(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "root"))
    p = tmp_path / "c.json"
    p.write_text('{"spec": 1, "scenario": "solve", "case": {"kind": "line", "gama": 2}}')
    assert cli.main(["run", str(p)]) == 4
    assert not (tmp_path / "root").exists()


def test_config_file_with_overrides_and_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "root"))
    cfg = parse_config(apply_overrides(ScenarioConfig().to_dict(),
                                       [(k[2:], v) for k, v in zip(SOLVE_ARGS[1::2], SOLVE_ARGS[2::2])]))
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert cli.main(["run", str(p), "--t-end", "0.25"]) == 0
    (run_dir,) = list((tmp_path / "root").iterdir())
    assert run_dir.name.startswith("solve-")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["solver"]["t_end"] == 0.25


def test_table_initial_condition(tmp_path):
    x = np.linspace(-60, 60, 4801)
    table = tmp_path / "u0.csv"
    np.savetxt(table, np.column_stack([x, x**2 + 1]), delimiter=",")
    out = tmp_path / "r"
    args = SOLVE_ARGS + ["--initial.table", str(table), "--solver.y_range", "[-4, 4]",
                         "--output", str(out)]
    assert cli.main(args) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert "table" in manifest["inputs"]


def test_catalog_contents(capsys):
    assert cli.main(["list"]) == 0
    text = capsys.readouterr().out
    assert "blowup" in text
    assert catalog_names("scenarios:") == list(SCENARIOS)
    assert catalog_names("initial-condition families:") == list(FAMILIES)
    for name in FAMILIES:
        line = next(l for l in text.splitlines() if l.split() and l.split()[0] == name)
        assert "kappa" in line or "gamma" in line


def test_every_catalog_name_is_accepted_by_run():
    for scenario in catalog_names("scenarios:"):
        assert cli.build_config(None, ["--scenario", scenario]).scenario == scenario
    for family in catalog_names("initial-condition families:"):
        assert cli.build_config(None, ["--u0", family]).initial.family == family


def test_cut_paste_scenario_runs(tmp_path):
    out = tmp_path / "r"
    assert cli.main(["run", "--scenario", "cut_paste", "--output", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [c["name"] for c in report["checks"]] == ["cut_paste_discrepancy", "gap_stays_zero"]


def test_fbsde_scenario_with_terminal_dump(tmp_path):
    from rootlip.fbsde import read_terminal_dump

    out = tmp_path / "r"
    args = ["run", "--scenario", "fbsde", "--case", "line", "--gamma", "2", "--kappa", "1",
            "--u0", "quadratic_plus_one", "--dy", "0.03125", "--solver.y_range", "[-12, 12]",
            "--experiment.n_paths", "20000", "--experiment.dump_terminal", "true",
            "--seed", "3", "--output", str(out)]
    assert cli.main(args) == 0
    report = json.loads((out / "report.json").read_text())
    vals = read_terminal_dump(out / "terminal_values.bin")
    assert vals.size == 20000
    assert report["ensemble"]["mean"] == pytest.approx(float(np.sum(vals)) / vals.size, rel=1e-12)
    assert "terminal_values.bin" in json.loads((out / "manifest.json").read_text())["files"]
