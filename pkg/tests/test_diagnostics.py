import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rootlip.diagnostics import (COLUMNS, DiagnosticsReport, lip_sqrt_estimate, one_sided_second_derivative,
                                 q_functional, q_ratio_exact, riccati_reference, running_max)
from rootlip.initial import smooth_bump
from rootlip.transform import DomainCase, make_transform


def test_lip_sqrt_examples():
    x = np.linspace(0, 5, 101)
    assert lip_sqrt_estimate(x**2, x) == pytest.approx(1.0, rel=1e-12)
    assert lip_sqrt_estimate(np.full_like(x, 4.0), x) == 0.0
    assert lip_sqrt_estimate(9 * x**2, x) == pytest.approx(3.0, rel=1e-12)


def test_lip_sqrt_on_nonuniform_grid_and_both_signs():
    x = np.sinh(np.linspace(-3, 3, 97))
    assert lip_sqrt_estimate(x**2, x) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        lip_sqrt_estimate(np.array([1.0, -1.0]), np.array([0.0, 1.0]))


def test_riccati_examples():
    assert riccati_reference(2.0, 0.5) == pytest.approx(4.0)
    assert riccati_reference(2.0, 0.0) == pytest.approx(2.0)
    assert riccati_reference(4.0, 0.49) == pytest.approx(200.0)
    assert np.allclose(riccati_reference(2.0, np.array([0.0, 0.5])), [2.0, 4.0])


def test_riccati_errors():
    with pytest.raises(ValueError, match="blow-up"):
        riccati_reference(4.0, 0.5)
    with pytest.raises(ValueError):
        riccati_reference(0.0, 0.1)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.0, 0.95))
def test_riccati_solves_its_ode(s0, frac):
    t = frac * 2 / s0
    h = 1e-6 / s0
    s = riccati_reference(s0, t)
    ds = (riccati_reference(s0, t + h) - riccati_reference(s0, max(t - h, 0.0))) / (t + h - max(t - h, 0.0))
    assert ds == pytest.approx(0.5 * s**2, rel=1e-4)


def test_q_examples():
    case = DomainCase("half_line", kappa=1.0)
    x = np.linspace(0, 5, 501)
    assert q_functional(2.5 * x**2, x, case, guard=0.01) == pytest.approx(2.5)
    t = 0.75
    assert q_functional(x**2 / (1 - t), x, case, guard=0.01) == pytest.approx(4.0)


def test_q_bump_exceeds_kappa():
    case = DomainCase("half_line", kappa=1.0)
    x = np.linspace(0, 8, 801)
    u = x**2 + 0.05 * smooth_bump(x, 4.0, 1.5)
    keep = x >= 0.01
    direct = np.max(u[keep] / x[keep] ** 2)
    q = q_functional(u, x, case, guard=0.01)
    assert q == direct and q > 1.0


def test_q_guard_and_interval_distance():
    case = DomainCase("interval", L=2.0)
    x = np.linspace(0, 2, 201)
    d = np.minimum(x, 2 - x)
    u = 0.7 * d**2
    u[1] = 10.0  # inside the guard, ignored
    assert q_functional(u, x, case, guard=0.05) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        q_functional(u, x, DomainCase("line"))


def test_running_max():
    assert list(running_max([1, 3, 2, 5, 4])) == [1, 3, 3, 5, 5]


def test_one_sided_second_derivative_exact_for_quadratics():
    x = np.array([0.0, 0.1, 0.35])
    assert one_sided_second_derivative(x, 3 * x**2 + 2 * x + 1) == pytest.approx(6.0, rel=1e-12)


@pytest.mark.parametrize("case", [DomainCase("half_line", gamma=2.0), DomainCase("interval", L=2.0),
                                  DomainCase("line", gamma=2.0)], ids=lambda c: c.kind)
def test_q_ratio_exact_matches_direct_ratio(case):
    tr = make_transform(case, (-3, 3), 1 / 16)
    v = 1.0 + 0.2 * np.sin(tr.y)
    x = tr.x_grid()
    u = tr.d1(tr.y) ** 2 * v
    ref = u / (1 + x**2) if case.kind == "line" else u / case.distance(x) ** 2
    assert np.allclose(q_ratio_exact(v, tr), ref, rtol=1e-12)


def test_report_row_order_and_divergence_flag():
    r = DiagnosticsReport(0.1, 1.0, 2.0, 3.0, math.nan, 0.0, 0.5)
    assert r.row() == [0.1, 1.0, 2.0, 3.0, r.d2_at_zero, 0.0, 0.5]
    assert list(r.to_dict()) == list(COLUMNS)
    assert not r.diverged
    assert DiagnosticsReport(0.1, math.inf, 2.0, 3.0, 0.0, 0.0, 0.0).diverged
