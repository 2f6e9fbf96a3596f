"""Command-line front end.

    rootlip run [config.json] [--key value ...]
    rootlip list

Exit codes: 0 success, 2 a checked invariant failed, 3 the solver failed,
4 the configuration was rejected (nothing is written in that case).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from . import fbsde
from .config import (SCENARIOS, ConfigError, ScenarioConfig, apply_overrides, load_config,
                     parse_config)
from .diagnostics import COLUMNS
from .initial import FAMILIES, FAMILY_RANGES, InitialCondition, from_table, make_initial
from .solver import StepFailure, solve
from .transform import make_transform, v_to_u_derivatives

log = logging.getLogger("rootlip")

EXIT_OK, EXIT_ASSERT, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4
OUTPUT_ENV = "ROOTLIP_OUTPUT_ROOT"
MAX_SNAPSHOTS_WRITTEN = 21

SCENARIO_HELP = {
    "solve": "integrate one initial datum and check sandwich, root-Lipschitz and zero-set bounds",
    "blowup": "early blow-up from kappa x^2 plus the log-scale bump; threshold and size ladders",
    "cut_paste": "two separated interval bumps: union against isolated solves",
    "fbsde": "Monte Carlo of dX = sqrt(u(T-t, X)) dB against the computed u",
    "convergence_study": "errors under simultaneous dy and dt refinement",
}


class AssertionFailure(RuntimeError):
    pass


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# scenario execution


def initial_condition(cfg: ScenarioConfig) -> InitialCondition:
    if cfg.initial.table is not None:
        data = np.loadtxt(cfg.initial.table, delimiter=",", ndmin=2, comments="#")
        return from_table(data[:, 0], data[:, 1], name=Path(cfg.initial.table).name)
    try:
        return make_initial(cfg.initial.family, cfg.case, **cfg.initial.params)
    except TypeError as exc:
        raise ConfigError(f"initial.params: {exc}") from exc


def _result_tables(result, offset: float = 0.0):
    tr = result.transform
    diag_rows = [d.row() for d in result.diagnostics]
    n = len(result.trajectory)
    keep = sorted(set(np.linspace(0, n - 1, min(n, MAX_SNAPSHOTS_WRITTEN)).round().astype(int)))
    snap_rows = []
    x = tr.x_grid() + offset
    for k in keep:
        f = result.trajectory[k]
        u, ux, uxx = v_to_u_derivatives(f, tr)
        for i in range(tr.y.size):
            snap_rows.append((f.t, tr.y[i], x[i], f.v[i], u[i], ux[i], uxx[i]))
    return diag_rows, snap_rows


def _closed_form(cfg: ScenarioConfig):
    fam, p = cfg.initial.family, cfg.initial.params
    if cfg.initial.table is not None:
        return None
    if fam == "quadratic":
        a = p.get("a", cfg.case.kappa)
        return lambda t, x: a * x**2 / (1 - a * t)
    if fam == "quadratic_plus_one":
        a, c = p.get("a", 1.0), p.get("c", 1.0)
        return lambda t, x: (a * x**2 + c) / (1 - a * t)
    return None


def run_solve(cfg: ScenarioConfig):
    u0 = initial_condition(cfg)
    tr = make_transform(cfg.case, cfg.solver.y_range, cfg.solver.dy)
    res = solve(u0, cfg.case, tr, cfg.solver, override=cfg.override)
    checks = [c.to_dict() for c in ex.standard_checks(res)]
    report = {"status": res.status, "t_star": res.t_star, "t_fail": res.t_fail,
              "certificate": res.certificate.to_dict(), "meta": res.meta,
              "final_diagnostics": res.diagnostics[-1].to_dict()}
    exact = _closed_form(cfg)
    if exact is not None and res.status == "completed":
        x = tr.x_grid()
        z1sq = tr.d1(tr.y) ** 2
        err, where = 0.0, ""
        for f, (a, b) in zip(res.trajectory, res.trust):
            ref = exact(f.t, x[a:b])
            rel = np.abs(z1sq[a:b] * f.v[a:b] - ref) / ref
            i = int(np.argmax(rel))
            if rel[i] > err:
                err, where = float(rel[i]), f"t={f.t:.6g}, node {a + i} (x={x[a + i]:.6g})"
        report["closed_form_rel_error"] = err
        checks.append({"name": "closed_form", "passed": err <= 1e-3, "worst": err, "where": where})
    report["checks"] = checks
    diag, snaps = _result_tables(res)
    return report, res, diag, snaps, {}


def run_blowup(cfg: ScenarioConfig):
    e = cfg.experiment
    report = ex.run_blowup_experiment(cfg.case.kappa, e.lam, target_b=e.target_b,
                                      ladder=tuple(e.ladder), size_ladder=tuple(e.size_ladder),
                                      return_result=True)
    res = report.pop("result")
    report["checks"] = [{"name": k, "passed": bool(v), "worst": None, "where": ""}
                        for k, v in report["checks"].items()]
    diag, snaps = _result_tables(res)
    return report, res, diag, snaps, {}


def run_cut_paste(cfg: ScenarioConfig):
    e = cfg.experiment
    report = ex.run_cut_paste_experiment(
        ex.BumpSpec(e.left_length, e.left_A), ex.BumpSpec(e.right_length, e.right_A), e.gap,
        dy=cfg.solver.dy, nx=e.nx, return_results=True)
    results = report.pop("results")
    report["checks"] = [
        {"name": "cut_paste_discrepancy", "passed": report["discrepancy"] <= 1e-5,
         "worst": report["discrepancy"], "where": ""},
        {"name": "gap_stays_zero", "passed": report["gap_max"] == 0.0,
         "worst": report["gap_max"], "where": ""}]
    diag, snaps = [], []
    for offset, res in results:
        d, s = _result_tables(res, offset)
        diag += d
        snaps += s
    return report, results[0][1], diag, snaps, {}


def run_fbsde(cfg: ScenarioConfig):
    e = cfg.experiment
    u0 = initial_condition(cfg)
    n_snap = 201
    scfg = replace(cfg.solver, t_end=e.T, n_snapshots=n_snap, snapshot_times=None)
    tr = make_transform(cfg.case, scfg.y_range, scfg.dy)
    res = solve(u0, cfg.case, tr, scfg, override=cfg.override)
    if res.status != "completed":
        raise StepFailure(res.t_fail or e.T, f"field solve ended with {res.status}")
    rec = tuple(e.T * k / 6 for k in range(1, 6)) + (0.0, 0.5 * e.T, e.T)
    ens = fbsde.simulate_paths(res, e.x0, e.T, e.n_paths, e.dt_sde, cfg.seed, u0=u0,
                               record_times=rec)
    mean, se = ens.mean_and_se()
    ref = float(fbsde.FieldInterpolant(res).u(e.T, np.array([e.x0]))[0])
    dec = fbsde.check_decoupling(ens, res, 0.5 * e.T, e.n_bins, u0=u0)
    mart = fbsde.martingale_check(ens, res, u0=u0)
    var = fbsde.variance_check(ens)
    # the halving self-check costs two more ensembles; a tenth of the paths is enough
    weak = fbsde.weak_error_estimate(res, e.x0, e.T, max(1000, e.n_paths // 10), e.dt_sde,
                                     cfg.seed + 1, u0=u0)
    report = {"ensemble": ens.summary(), "u_T_x0": ref, "decoupling": dec, "martingale": mart,
              "variance": var, "dt_halving": weak}
    report["checks"] = [
        {"name": "valid_ensemble", "passed": ens.valid, "worst": ens.exit_fraction, "where": ""},
        {"name": "mean_matches_u", "passed": abs(mean - ref) <= 3 * se,
         "worst": abs(mean - ref) / se if se > 0 else 0.0, "where": f"x0={e.x0}"},
        {"name": "decoupling", "passed": dec["passed"], "worst": dec["max_standardized"],
         "where": f"t={0.5 * e.T}"},
        {"name": "martingale", "passed": mart["passed"],
         "worst": max(abs(r["standardized"]) for r in mart["rows"]), "where": ""},
        {"name": "variance", "passed": var["passed"], "worst": abs(var["standardized"]), "where": ""},
    ]
    extra = {}
    if e.dump_terminal:
        buf = io.BytesIO()
        v = np.ascontiguousarray(ens.terminal_values, dtype="<f8")
        buf.write(np.uint64(v.size).astype("<u8").tobytes())
        buf.write(v.tobytes())
        extra["terminal_values.bin"] = buf.getvalue()
    diag, snaps = _result_tables(res)
    return report, res, diag, snaps, extra


def run_convergence(cfg: ScenarioConfig):
    e = cfg.experiment
    u0 = initial_condition(cfg)
    exact = _closed_form(cfg)
    study = ex.convergence_study(u0, cfg.case, cfg.solver, exact, e.levels, e.dt_power)
    ok = all(r >= 2.0 for r in study["ratios"])
    report = dict(study)
    report["checks"] = [{"name": "error_halves", "passed": ok,
                         "worst": min(study["ratios"]) if study["ratios"] else None, "where": ""}]
    tr = make_transform(cfg.case, cfg.solver.y_range, cfg.solver.dy)
    res = solve(u0, cfg.case, tr, cfg.solver, override=cfg.override)
    diag, snaps = _result_tables(res)
    return report, res, diag, snaps, {}


RUNNERS = {"solve": run_solve, "blowup": run_blowup, "cut_paste": run_cut_paste,
           "fbsde": run_fbsde, "convergence_study": run_convergence}


def output_dir_for(cfg: ScenarioConfig) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get(OUTPUT_ENV, "rootlip-runs"))
    digest = hashlib.sha256(cfg.to_json().encode()).hexdigest()[:12]
    return root / f"{cfg.scenario}-{digest}"


def git_blob_hash(data: bytes) -> str:
    """Object id git would give `data` as a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hashes(cfg: ScenarioConfig) -> dict:
    hashes = {"config": git_blob_hash(cfg.to_json().encode())}
    if cfg.initial.table is not None:
        hashes["table"] = git_blob_hash(Path(cfg.initial.table).read_bytes())
    return hashes


def write_outputs(out: Path, cfg: ScenarioConfig, report, result, diag, snaps, extra) -> dict:
    files = {
        "report.json": dumps(report).encode(),
        "diagnostics.csv": _csv_text(COLUMNS, diag).encode(),
        "snapshots.csv": _csv_text(("t", "y", "x", "v", "u", "du_dx", "d2u_dx2"), snaps).encode(),
    }
    files.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, data in sorted(files.items()):
        (out / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": hashlib.sha256(cfg.to_json().encode()).hexdigest(),
        "inputs": input_hashes(cfg),
        "transform": result.transform.describe() if result is not None else None,
        "grid": None if result is None else {
            "y_min": float(result.transform.y[0]), "y_max": float(result.transform.y[-1]),
            "dy": result.transform.dy, "n": int(result.transform.y.size)},
        "barriers": [b.to_dict() for b in result.barriers] if result is not None and result.barriers else None,
        "files": hashes,
    }
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8", newline="\n")
    return hashes


def execute(cfg: ScenarioConfig, out: Path | None = None) -> tuple[int, dict]:
    """Run a parsed scenario and write its outputs; returns (exit code, report)."""
    runner = RUNNERS[cfg.scenario]
    try:
        report, result, diag, snaps, extra = runner(cfg)
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER, {}
    except ConfigError:
        raise
    if result is not None and result.status == "step_failure":
        report["status"] = "step_failure"
    out = out or output_dir_for(cfg)
    write_outputs(out, cfg, report, result, diag, snaps, extra)
    if result is not None and result.status == "step_failure" and cfg.scenario != "blowup":
        print(f"solver failure at t={result.t_fail}", file=sys.stderr)
        return EXIT_SOLVER, report
    failed = [c for c in report.get("checks", []) if not c["passed"]]
    if failed:
        c = failed[0]
        print(f"assertion failed: {c['name']} (worst {c['worst']}) {c['where']}".rstrip(),
              file=sys.stderr)
        return EXIT_ASSERT, report
    return EXIT_OK, report


# ---------------------------------------------------------------------------
# argument handling


def catalog() -> str:
    lines = ["scenarios:"]
    for name in SCENARIOS:
        lines.append(f"  {name:<18} {SCENARIO_HELP[name]}")
    lines.append("initial-condition families:")
    for name in FAMILIES:
        lines.append(f"  {name:<20} {FAMILY_RANGES[name]}")
    return "\n".join(lines) + "\n"


def list_scenarios() -> str:
    text = catalog()
    sys.stdout.write(text)
    return text


def _pairs(tokens):
    pairs = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"expected --key value, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for --{key}")
            val = tokens[i + 1]
            i += 2
        pairs.append((key, val))
    return pairs


def build_config(config_path, tokens) -> ScenarioConfig:
    if config_path:
        raw = load_config(config_path).to_dict()
    else:
        raw = ScenarioConfig().to_dict()
    return parse_config(apply_overrides(raw, _pairs(tokens)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rootlip", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="run a scenario: [config.json] [--key value ...]")
    sub.add_parser("list", help="list scenarios and initial-condition families")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        if rest:
            parser.error(f"unexpected arguments {rest}")
        list_scenarios()
        return EXIT_OK
    config_path = None
    if rest and not rest[0].startswith("--"):
        config_path, rest = rest[0], rest[1:]
    try:
        cfg = build_config(config_path, rest)
        code, _ = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # data-level rejections (growth hypothesis, horizon past 1/kappa, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
