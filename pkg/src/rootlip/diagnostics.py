"""Scalar diagnostics of a solution snapshot.

Everything is computed from v on the transformed grid and reported in the
physical variable x.  Quantities that have no meaning for a case (the
boundary second derivative on the whole line, say) are NaN.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .transform import FieldPair, Transform, japanese, v_to_u_derivatives

COLUMNS = ("t", "lip_sqrt", "q_ratio", "d2_sup", "d2_at_zero", "zero_residual", "barrier_margin")


@dataclass(frozen=True)
class DiagnosticsReport:
    t: float
    lip_sqrt: float
    q_ratio: float
    d2_sup: float
    d2_at_zero: float
    zero_residual: float
    barrier_margin: float

    def row(self) -> list[float]:
        return [getattr(self, c) for c in COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def diverged(self) -> bool:
        return not all(math.isfinite(v) or math.isnan(v) for v in self.row())


def lip_sqrt_estimate(u, x) -> float:
    """max over adjacent nodes of |sqrt(u_{i+1}) - sqrt(u_i)| / (x_{i+1} - x_i)."""
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(u < 0):
        raise ValueError("lip_sqrt_estimate needs u >= 0")
    r = np.sqrt(u)
    return float(np.max(np.abs(np.diff(r)) / np.diff(x)))


def riccati_reference(s0: float, t):
    """2 / (2/s0 - t): the second derivative at a preserved zero under the
    closed Riccati ODE s' = s^2/2."""
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t >= 2.0 / s0):
        raise ValueError(f"t reaches the Riccati blow-up time {2.0 / s0}")
    out = 2.0 / (2.0 / s0 - t)
    return float(out) if out.ndim == 0 else out


def q_functional(u, x, case, guard: float | None = None) -> float:
    """sup of u/d^2 over nodes with d >= guard (half line or interval)."""
    if case.kind == "line":
        raise ValueError("q_functional is defined for the half line and the interval")
    x = np.asarray(x, dtype=float)
    d = case.distance(x)
    keep = d > 0 if guard is None else d >= guard
    return float(np.max(np.asarray(u, dtype=float)[keep] / d[keep] ** 2))


def running_max(values):
    return np.maximum.accumulate(np.asarray(values, dtype=float))


def one_sided_second_derivative(x, u) -> float:
    """2 u[x0, x1, x2]: second divided difference on three nonuniform nodes."""
    x0, x1, x2 = x[:3]
    u0, u1, u2 = u[:3]
    d01 = (u1 - u0) / (x1 - x0)
    d12 = (u2 - u1) / (x2 - x1)
    return float(2.0 * (d12 - d01) / (x2 - x0))


def q_ratio_exact(v, transform: Transform) -> np.ndarray:
    """u/d^2 (u/<x>^2 on the line) evaluated without dividing small numbers.

    On the half line and the interval u/d^2 = v / (d/zeta')^2 and d/zeta' is
    bounded away from 0, so no singular-ratio guard is needed.
    """
    if transform.case.kind == "line":
        x = transform.x_grid()
        return v * transform.d1(transform.y) ** 2 / japanese(x, 2.0)
    return v / transform.dist_over_d1() ** 2


def blowup_indicators(v, transform: Transform, sl: slice) -> tuple[float, float, float]:
    """(max v, Lip sqrt(u), sup |u_xx|) over the trusted nodes."""
    field = FieldPair(0.0, transform.y, v)
    u, _, uxx = v_to_u_derivatives(field, transform)
    x = transform.x_grid()
    vmax = float(np.max(v[sl]))
    lip = lip_sqrt_estimate(u[sl], x[sl])
    return vmax, lip, float(np.max(np.abs(uxx[sl])))


def compute_diagnostics(field: FieldPair, transform: Transform, sl: slice,
                        barriers=None) -> DiagnosticsReport:
    """Diagnostics of one snapshot over the trusted index range `sl`."""
    case = transform.case
    y = transform.y
    v = np.asarray(field.v, dtype=float)
    u, _, uxx = v_to_u_derivatives(field, transform)
    x = transform.x_grid()
    ut, xt = u[sl], x[sl]
    lip = lip_sqrt_estimate(ut, xt)
    q = float(np.max(q_ratio_exact(v, transform)[sl]))
    d2_sup = float(np.max(np.abs(uxx[sl])))
    z1sq = transform.d1(y) ** 2
    if case.kind == "line":
        d2_zero = math.nan
        zero_res = 0.0
    else:
        d2_zero = one_sided_second_derivative(xt, ut)
        zero_res = float(z1sq[0] * v[0])
        if case.kind == "interval":
            zero_res = max(zero_res, float(z1sq[-1] * v[-1]))
    if barriers is None:
        margin = math.nan
    else:
        sub, sup = barriers
        lo = sub(field.t, xt) / z1sq[sl]
        hi = sup(field.t, xt) / z1sq[sl]
        margin = float(min(np.min(hi - v[sl]), np.min(v[sl] - lo)))
    return DiagnosticsReport(float(field.t), lip, q, d2_sup, d2_zero, zero_res, margin)
