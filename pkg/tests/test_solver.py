import math
from dataclasses import replace

import numpy as np
import pytest

from rootlip.barriers import barriers_for
from rootlip.initial import InitialCondition, make_initial
from rootlip.solver import (SolverConfig, StepFailure, detect_blowup, explicit_step,
                            fit_blowup_time, run, semi_implicit_step, solve, step)
from rootlip.transform import DomainCase, FieldPair, make_transform


def const_field(tr, c):
    return FieldPair(0.0, tr.y, np.full(tr.y.size, float(c)))


def test_zero_is_a_fixed_point():
    for case in (DomainCase("line"), DomainCase("half_line"), DomainCase("interval", L=2.0)):
        tr = make_transform(case, (-4, 4), 1 / 16)
        for scheme in ("semi_implicit_lagged", "explicit_cfl"):
            out = step(const_field(tr, 0.0), tr, SolverConfig(scheme=scheme), 1e-3)
            assert np.all(out.v == 0.0)


def test_constant_on_half_line_grows_by_reaction_only():
    # zeta = e^y: both coefficient ratios are 1, so v' = v^2 for constant v
    tr = make_transform(DomainCase("half_line", gamma=2.0), (-2, 2), 1 / 4)
    out = step(const_field(tr, 1.0), tr, SolverConfig(scheme="explicit_cfl"), 0.01)
    assert np.allclose(out.v, 1.01, rtol=0, atol=1e-15)


def test_explicit_limit_enforced():
    tr = make_transform(DomainCase("half_line", gamma=2.0), (-2, 2), 1 / 16)
    with pytest.raises(ValueError, match="explicit limit"):
        step(const_field(tr, 1.0), tr, SolverConfig(scheme="explicit_cfl"), 0.01)


def test_explicit_and_semi_implicit_steps_differ_by_dt_squared():
    case = DomainCase("line", gamma=2.0)
    tr = make_transform(case, (-3, 3), 1 / 32)
    v = 1.0 + 0.3 * np.sin(2 * tr.y) + 0.1 * np.cos(5 * tr.y)
    cfg = SolverConfig()
    diffs = []
    for dt in (2e-4, 1e-4, 5e-5):
        a = explicit_step(v, tr, cfg, dt)
        b, ok = semi_implicit_step(v, tr, cfg, dt)
        assert ok
        diffs.append(np.max(np.abs(a - b)[2:-2]))
    assert diffs[0] / diffs[1] == pytest.approx(4.0, rel=0.05)
    assert diffs[1] / diffs[2] == pytest.approx(4.0, rel=0.05)


def test_quadratic_plus_one_on_the_line():
    case = DomainCase("line", kappa=1.0, K=1.0, gamma=2.0)
    cfg = SolverConfig(dy=1 / 32, t_end=0.5, n_snapshots=3, y_range=(-8, 8))
    res = run(make_initial("quadratic_plus_one", case), case, cfg)
    assert res.status == "completed"
    fin = res.final()
    i = int(np.argmin(np.abs(res.transform.y)))
    assert fin.t == 0.5
    # zeta'(0) = 1, so v(0) is u(0.5, 0)
    assert fin.v[i] == pytest.approx(2.0, rel=1e-4)
    a, b = res.trust[-1]
    x = res.transform.x_grid()[a:b]
    u = res.transform.d1(res.transform.y[a:b]) ** 2 * fin.v[a:b]
    assert np.max(np.abs(u / ((x**2 + 1) / 0.5) - 1)) < 1e-3


def test_stays_above_the_subsolution_it_starts_on():
    # data equal to the barrier leave no slack, so the shortfall is pure
    # discretization error and must shrink with dy
    case = DomainCase("interval", kappa=1.0, K=2.0, L=2.0)
    sub, _ = barriers_for(case, 0.0, check=False)
    u0 = InitialCondition("sub", lambda x: sub(0.0, x))
    worst = []
    for dy in (1 / 32, 1 / 64):
        res = run(u0, case, SolverConfig(dy=dy, t_end=0.3, n_snapshots=4))
        tr = res.transform
        z1sq = tr.d1(tr.y) ** 2
        x = tr.x_grid()
        w = 0.0
        for f, (a, b) in zip(res.trajectory, res.trust):
            lo = sub(f.t, x[a:b]) / z1sq[a:b]
            w = max(w, float(np.max(lo - f.v[a:b])) / max(1.0, f.v.max()))
        worst.append(w)
    assert worst[1] <= 1e-6
    assert worst[1] <= worst[0] / 4


def test_refuses_to_reach_one_over_kappa_unarmed():
    case = DomainCase("half_line", kappa=2.0, gamma=2.0)
    with pytest.raises(ValueError, match="1/kappa"):
        run(make_initial("quadratic", case), case, SolverConfig(t_end=0.5))


def test_refuses_inadmissible_data_without_override():
    case = DomainCase("half_line", kappa=1.0)
    u0 = make_initial("quadratic", case, a=2.0)
    with pytest.raises(ValueError, match="growth hypothesis"):
        run(u0, case, SolverConfig(t_end=0.1, dy=1 / 8))
    res = run(u0, case, SolverConfig(t_end=0.1, dy=1 / 8), override=True)
    assert res.status == "completed" and res.barriers is None


def test_synthetic_blowup_fit():
    t = np.linspace(0.0, 0.6, 40)
    assert fit_blowup_time(t, 3.0 / (0.7 - t)) == pytest.approx(0.7, rel=1e-3)
    # lip_sqrt diverges like (T - t)^(-1/2)
    stream = {"t": t, "lip_sqrt": np.sqrt(2.0 / (0.7 - t))}
    det = detect_blowup(stream, {"lip_sqrt": 4.0})
    assert det.quantity == "lip_sqrt" and det.t_star == pytest.approx(0.7, rel=1e-3)
    assert detect_blowup(stream, {"lip_sqrt": 1e9}) is None


def test_quadratic_blowup_time_converges_to_one_over_kappa():
    case = DomainCase("half_line", kappa=1.0, gamma=2.0)
    u0 = make_initial("quadratic", case)
    crossings = []
    for vmax in (10.0, 100.0, 1000.0):
        cfg = SolverConfig(dy=1 / 8, y_range=(-4, 4), t_end=1.0, blowup_thresholds=(vmax, None))
        res = run(u0, case, cfg)
        assert res.status == "blowup"
        assert res.t_star == pytest.approx(1.0, rel=0.05)
        crossings.append(res.final().t)
    # v = 1/(1 - t) crosses vmax at 1 - 1/vmax
    assert np.allclose(crossings, [0.9, 0.99, 0.999], atol=2e-3)


def test_constant_data_never_trigger_detection():
    case = DomainCase("line", kappa=1.0, gamma=0.0)
    u0 = InitialCondition("one", lambda x: np.ones_like(x))
    cfg = SolverConfig(dy=1 / 8, t_end=2.0, n_snapshots=3, blowup_thresholds=(10.0, 10.0))
    res = run(u0, case, cfg)
    assert res.status == "completed"
    assert np.allclose(res.final().v, 1.0, rtol=1e-12)


def test_picard_non_contraction_becomes_step_failure(monkeypatch):
    import rootlip.solver as solver_mod

    def never_contracts(v, *a, **k):
        return v, False

    monkeypatch.setattr(solver_mod, "semi_implicit_step", never_contracts)
    case = DomainCase("line", kappa=1.0, gamma=2.0)
    res = run(make_initial("quadratic_plus_one", case), case,
              SolverConfig(dy=1 / 8, t_end=0.1, y_range=(-3, 3)))
    assert res.status == "step_failure" and res.t_fail is not None


def test_non_finite_update_raises():
    tr = make_transform(DomainCase("line"), (-1, 1), 1 / 8)
    f = const_field(tr, 1.0)
    f.v[3] = math.nan
    with pytest.raises(StepFailure):
        step(f, tr, SolverConfig(), 1e-3)


def test_boundary_modes_agree_in_the_trust_region():
    case = DomainCase("interval", kappa=1.0, K=4.0, L=2.0)
    u0 = make_initial("bump_on_interval", case)
    base = SolverConfig(dy=1 / 32, t_end=0.2, n_snapshots=2, y_range=(-6, 6))
    finals = {}
    for mode in ("far_field", "frozen_dirichlet", "barrier_dirichlet"):
        res = run(u0, case, replace(base, bc_mode=mode))
        assert res.status == "completed"
        finals[mode] = res
    a = max(r.trust[-1][0] for r in finals.values())
    b = min(r.trust[-1][1] for r in finals.values())
    ref = finals["far_field"].final().v[a:b]
    for r in finals.values():
        assert np.max(np.abs(r.final().v[a:b] - ref)) < 1e-4


def test_snapshot_times_and_config_validation():
    cfg = SolverConfig(t_end=1.0, snapshot_times=(0.5, 0.25))
    assert list(cfg.times()) == [0.0, 0.25, 0.5]
    with pytest.raises(ValueError):
        SolverConfig(t_end=1.0, snapshot_times=(2.0,)).times()
    for bad in ({"dy": 0}, {"scheme": "rk4"}, {"bc_mode": "periodic"}, {"theta": 0.3},
                {"picard_iters": -1}, {"eps_viscosity": -1.0}, {"blowup_thresholds": (1.0,)}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_runs_are_deterministic():
    case = DomainCase("half_line", kappa=1.0, K=1.0, gamma=1.0)
    u0 = make_initial("power_law", case)
    cfg = SolverConfig(dy=1 / 16, t_end=0.2, n_snapshots=3)
    a, b = run(u0, case, cfg), run(u0, case, cfg)
    assert all(np.array_equal(f.v, g.v) for f, g in zip(a.trajectory, b.trajectory))


def test_nonnegativity_and_clamp_roundoff():
    case = DomainCase("interval", kappa=1.0, K=4.0, L=1.0)
    res = run(make_initial("bump_on_interval", case), case, SolverConfig(dy=1 / 16, t_end=0.3))
    assert all(np.all(f.v >= 0) for f in res.trajectory)
    assert res.meta["max_clamp_rel"] <= 1e-12
    assert res.meta["n_steps"] > 0


def test_transform_must_match_case():
    case = DomainCase("line")
    tr = make_transform(DomainCase("line", kappa=2.0), (-2, 2), 1 / 8)
    with pytest.raises(ValueError, match="different case"):
        solve(make_initial("quadratic_plus_one", case), case, tr, SolverConfig(t_end=0.1))
