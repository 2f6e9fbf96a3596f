import numpy as np
import pytest

from rootlip.fbsde import (FieldInterpolant, check_decoupling, martingale_check, read_terminal_dump,
                           simulate_paths, variance_check, weak_error_estimate, write_terminal_dump)
from rootlip.initial import InitialCondition, make_initial
from rootlip.solver import SolverConfig, run
from rootlip.transform import DomainCase


def constant_run(c, t_end=0.5):
    case = DomainCase("line", kappa=1.0, K=max(1.0, c, 1 / c) if c > 0 else 1.0, gamma=0.0)
    u0 = InitialCondition("const", lambda x: np.full_like(x, float(c)))
    res = run(u0, case, SolverConfig(dy=1 / 8, t_end=t_end, n_snapshots=3, y_range=(-20, 20)),
              override=c == 0)
    return res, u0


@pytest.fixture(scope="module")
def quadratic():
    case = DomainCase("line", kappa=1.0, K=1.0, gamma=2.0)
    u0 = make_initial("quadratic_plus_one", case)
    res = run(u0, case, SolverConfig(dy=1 / 32, t_end=0.5, n_snapshots=51, y_range=(-12, 12)))
    return res, u0


def test_constant_field_variance():
    res, u0 = constant_run(2.0)
    ens = simulate_paths(res, 0.0, 0.5, 20_000, 0.005, seed=4, u0=u0)
    assert ens.exit_fraction == 0
    var = np.var(ens.x_terminal, ddof=1)
    se = var * np.sqrt(2 / (ens.n_paths - 1))
    assert abs(var - 2.0 * 0.5) <= 3 * se
    chk = variance_check(ens)
    assert chk["integral"] == pytest.approx(1.0, rel=1e-9) and chk["passed"]


def test_zero_data_give_zero_terminal_values():
    res, u0 = constant_run(0.0)
    ens = simulate_paths(res, 0.3, 0.5, 1000, 0.01, seed=1, u0=u0)
    assert np.all(ens.terminal_values == 0) and np.all(ens.x_terminal == 0.3)


def test_interpolant_reproduces_snapshots(quadratic):
    res, u0 = quadratic
    f = FieldInterpolant(res, u0)
    X = np.array([-1.0, 0.0, 0.7, 2.0])
    assert np.allclose(f.u(0.5, X), 2 * (X**2 + 1), rtol=1e-3)
    assert np.array_equal(f.u(0.0, X), u0(X))
    k = f.bracket(X)
    assert np.all(f.x[k] <= X) and np.all(X < f.x[k + 1])
    assert np.allclose(f.sqrt_u_bracketed(0.25, X, k), f.sqrt_u(0.25, X), rtol=1e-13)


def test_decoupling_at_the_ends(quadratic):
    res, u0 = quadratic
    T = 0.5
    ens = simulate_paths(res, 1.0, T, 20_000, T / 500, seed=3, u0=u0, record_times=(0.0, T))
    end = check_decoupling(ens, res, T, u0=u0)
    assert end["passed"] and end["max_standardized"] == 0.0
    start = check_decoupling(ens, res, 0.0, u0=u0)
    assert len(start["bins"]) == 1 and start["bins"][0]["count"] == 20_000
    m, se = ens.mean_and_se()
    assert start["bins"][0]["mean"] == m
    assert abs(m - 4.0) <= 3 * se


def test_decoupling_and_martingale_midway(quadratic):
    res, u0 = quadratic
    T = 0.5
    ens = simulate_paths(res, 1.0, T, 40_000, T / 500, seed=9, u0=u0,
                         record_times=(0.0, 0.25, T))
    dec = check_decoupling(ens, res, 0.25, u0=u0)
    assert not dec["inconclusive"] and dec["passed"], dec["max_standardized"]
    mart = martingale_check(ens, res, u0=u0)
    assert mart["Y0"] == pytest.approx(4.0, rel=1e-3) and mart["passed"]
    assert variance_check(ens)["passed"]


def test_too_few_samples_is_inconclusive(quadratic):
    res, u0 = quadratic
    ens = simulate_paths(res, 1.0, 0.5, 200, 0.01, seed=2, u0=u0, record_times=(0.25,))
    out = check_decoupling(ens, res, 0.25, u0=u0)
    assert out["inconclusive"] and not out["passed"]
    with pytest.raises(KeyError):
        check_decoupling(ens, res, 0.1, u0=u0)


def test_same_seed_bit_identical_and_seed_matters(quadratic):
    res, u0 = quadratic
    a = simulate_paths(res, 1.0, 0.5, 20_000, 0.01, seed=5, u0=u0)
    b = simulate_paths(res, 1.0, 0.5, 20_000, 0.01, seed=5, u0=u0)
    c = simulate_paths(res, 1.0, 0.5, 20_000, 0.01, seed=6, u0=u0)
    assert a.terminal_values.tobytes() == b.terminal_values.tobytes()
    assert not np.array_equal(a.terminal_values, c.terminal_values)


def test_paths_do_not_depend_on_ensemble_size(quadratic):
    # each chunk of paths owns its stream, so a prefix of a bigger run matches
    res, u0 = quadratic
    small = simulate_paths(res, 1.0, 0.5, 16_384, 0.01, seed=5, u0=u0)
    big = simulate_paths(res, 1.0, 0.5, 20_000, 0.01, seed=5, u0=u0)
    assert np.array_equal(small.x_terminal, big.x_terminal[:16_384])


def test_weak_error_estimate_is_small(quadratic):
    res, u0 = quadratic
    out = weak_error_estimate(res, 1.0, 0.5, 20_000, 0.5 / 200, seed=1, u0=u0)
    assert out["dt_sde"] == pytest.approx(0.0025)
    assert abs(out["weak_error_estimate"]) <= 3 * out["se"] + 0.01


def test_horizon_and_start_errors(quadratic):
    res, u0 = quadratic
    with pytest.raises(ValueError, match="horizon"):
        simulate_paths(res, 1.0, 0.6, 10)
    with pytest.raises(ValueError, match="outside"):
        simulate_paths(res, 1e9, 0.5, 10)
    with pytest.raises(ValueError):
        simulate_paths(res, 1.0, 0.5, 0)


def test_terminal_dump_roundtrip(tmp_path):
    vals = np.array([0.0, 1.5, -2.25, np.pi])
    p = tmp_path / "t.bin"
    write_terminal_dump(p, vals)
    raw = p.read_bytes()
    assert len(raw) == 8 + 8 * vals.size
    assert int.from_bytes(raw[:8], "little") == 4
    assert np.array_equal(read_terminal_dump(p), vals)
    p.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="declares"):
        read_terminal_dump(p)
