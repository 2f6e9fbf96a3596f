"""Time stepping of the transformed equation

    dv/dt = 1/2 (v + eps) v_yy + 3/2 (zeta''/zeta') v v_y + (zeta'''/zeta') v^2

on a truncated uniform y-grid, plus blow-up detection.

The default scheme lags the diffusion coefficient and the explicit terms at
the average of the old value and the current Picard iterate, and treats
v_yy with a theta-weighted implicit tridiagonal solve.  With theta = 1/2 and
at least one re-lag the step is second order in time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from . import barriers as barrier_mod
from .diagnostics import DiagnosticsReport, blowup_indicators, compute_diagnostics
from .initial import HypothesisCertificate, InitialCondition, validate_hypothesis
from .transform import (CLAMP_RTOL, DomainCase, FieldPair, Transform, clamp_nonnegative,
                        make_transform, u_to_v)

log = logging.getLogger(__name__)

SCHEMES = ("semi_implicit_lagged", "explicit_cfl")
BC_MODES = ("barrier_dirichlet", "frozen_dirichlet", "far_field")
# barrier edge data this many times larger than v0 would swamp the solution
BARRIER_EDGE_RATIO = 1e3


class StepFailure(RuntimeError):
    def __init__(self, t, reason):
        super().__init__(f"step failure at t={t:.6g}: {reason}")
        self.t = t
        self.reason = reason


@dataclass(frozen=True)
class SolverConfig:
    dy: float = 1.0 / 64
    dt_initial: float = 1e-3
    t_end: float = 0.5
    scheme: str = "semi_implicit_lagged"
    picard_iters: int = 2
    bc_mode: str = "far_field"
    eps_viscosity: float = 0.0
    # (v_max, lip_max); None disarms blow-up detection
    blowup_thresholds: tuple | None = None
    y_range: tuple | None = None
    n_snapshots: int = 11
    snapshot_times: tuple | None = None
    theta: float = 0.5
    cfl_advection: float = 0.5
    cfl_reaction: float = 0.05
    validate_barriers: bool = True
    # trust margin in units of the diffusive spread sqrt(int max v dt) near each end
    trust_sigmas: float = 6.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.dy > 0:
            raise ValueError("dy must be positive")
        if not self.dt_initial > 0:
            raise ValueError("dt_initial must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.bc_mode not in BC_MODES:
            raise ValueError(f"unknown bc_mode {self.bc_mode!r}; expected one of {BC_MODES}")
        if not (isinstance(self.picard_iters, int) and 0 <= self.picard_iters <= 10):
            raise ValueError("picard_iters must be an integer in [0, 10]")
        if self.eps_viscosity < 0:
            raise ValueError("eps_viscosity must be nonnegative")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [1/2, 1]")
        if self.blowup_thresholds is not None and len(self.blowup_thresholds) != 2:
            raise ValueError("blowup_thresholds is a pair (v_max, lip_max)")

    @property
    def armed(self) -> bool:
        return self.blowup_thresholds is not None

    def times(self) -> np.ndarray:
        if self.snapshot_times is not None:
            ts = np.asarray(sorted(set(float(t) for t in self.snapshot_times)))
            if ts[0] < 0 or ts[-1] > self.t_end:
                raise ValueError("snapshot times must lie in [0, t_end]")
            if ts[0] > 0:
                ts = np.concatenate([[0.0], ts])
            return ts
        return np.linspace(0.0, self.t_end, max(2, self.n_snapshots))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("blowup_thresholds", "y_range", "snapshot_times"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


@dataclass
class SolveResult:
    trajectory: list
    status: str
    diagnostics: list
    trust: list
    transform: Transform
    case: DomainCase
    t_star: float | None = None
    t_fail: float | None = None
    barriers: tuple | None = None
    certificate: HypothesisCertificate | None = None
    stream: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.trajectory])

    def final(self) -> FieldPair:
        return self.trajectory[-1]

    def snapshot_at(self, t: float) -> FieldPair:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.trajectory[i].t, t, rel_tol=0, abs_tol=1e-12):
            raise KeyError(f"no snapshot at t={t}")
        return self.trajectory[i]


# ---------------------------------------------------------------------------
# one step


def _dy1(v, dy):
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2 * dy)
    d[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dy)
    d[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dy)
    return d


def _dy2_interior(v, dy):
    out = np.zeros_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dy**2
    return out


def _explicit_terms(v, r2, r3, dy):
    return 1.5 * r2 * v * _dy1(v, dy) + r3 * v * v


def _coefficients(transform: Transform):
    y = transform.y
    return transform.ratio2(y), transform.ratio3(y)


def explicit_step(v, transform: Transform, config: SolverConfig, dt, bc=None):
    """Forward Euler.  `bc` is (left, right) Dirichlet data or None (far field)."""
    dy = transform.dy
    r2, r3 = _coefficients(transform)
    c = 0.5 * (v + config.eps_viscosity)
    new = v + dt * (c * _dy2_interior(v, dy) + _explicit_terms(v, r2, r3, dy))
    if bc is not None:
        new[0], new[-1] = bc
    return new


def semi_implicit_step(v, transform: Transform, config: SolverConfig, dt, bc=None,
                       coeffs=None):
    """Lagged-coefficient theta scheme with Picard re-lagging.

    Returns (v_new, contracted).  `contracted` is False when a Picard
    correction grew relative to the previous one.
    """
    dy = transform.dy
    r2, r3 = coeffs if coeffs is not None else _coefficients(transform)
    th = config.theta
    eps = config.eps_viscosity
    n = v.size
    lap_old = _dy2_interior(v, dy)
    ab = np.zeros((3, n))
    it = v
    prev_change = math.inf
    contracted = True
    for k in range(config.picard_iters + 1):
        vbar = v if k == 0 else 0.5 * (v + it)
        c = 0.5 * (vbar + eps)
        rhs = v + dt * ((1.0 - th) * c * lap_old + _explicit_terms(vbar, r2, r3, dy))
        w = dt * th * c / dy**2
        ab[0, 2:] = -w[1:-1]
        ab[1, :] = 1.0
        ab[1, 1:-1] = 1.0 + 2.0 * w[1:-1]
        ab[2, :-2] = -w[1:-1]
        if bc is None:
            # far field: no curvature term at the two end nodes
            rhs[0] = v[0] + dt * _explicit_terms(vbar, r2, r3, dy)[0]
            rhs[-1] = v[-1] + dt * _explicit_terms(vbar, r2, r3, dy)[-1]
        else:
            rhs[0], rhs[-1] = bc
        new = solve_banded((1, 1), ab, rhs, check_finite=False)
        change = float(np.max(np.abs(new - it)))
        if k >= 2 and change > prev_change * (1 + 1e-9) + 1e-14 * float(np.max(np.abs(new))):
            contracted = False
        prev_change = change
        it = new
    return it, contracted


def step(field: FieldPair, transform: Transform, config: SolverConfig, dt: float,
         bc=None) -> FieldPair:
    """Advance one step with the configured scheme and clamp at zero.

    Raises StepFailure on non-finite values or Picard non-contraction.
    """
    return _advance(field, transform, config, dt, bc)[0]


def _advance(field, transform, config, dt, bc):
    v = np.asarray(field.v, dtype=float)
    if config.scheme == "explicit_cfl":
        limit = 0.4 * transform.dy**2 / max(float(np.max(v)) + config.eps_viscosity, 1e-300)
        if dt > limit * (1 + 1e-12):
            raise ValueError(f"dt={dt} exceeds the explicit limit {limit}")
        new = explicit_step(v, transform, config, dt, bc)
        ok = True
    else:
        new, ok = semi_implicit_step(v, transform, config, dt, bc)
    if not np.all(np.isfinite(new)):
        raise StepFailure(field.t + dt, "non-finite values")
    if not ok:
        raise StepFailure(field.t + dt, "Picard iteration did not contract")
    scale = max(1.0, float(np.max(new)))
    new, clamped = clamp_nonnegative(new, scale)
    return FieldPair(field.t + dt, field.y, new), clamped / scale


# ---------------------------------------------------------------------------
# blow-up detection


@dataclass(frozen=True)
class BlowupDetection:
    t_star: float
    t_cross: float
    quantity: str
    threshold: float
    window: int


# how each indicator diverges: the power p with indicator^p ~ c/(T - t)
_DIVERGENCE_POWER = {"v_max": 1.0, "lip_sqrt": 2.0, "d2_sup": 1.0}


def fit_blowup_time(t, f, power: float = 1.0) -> float:
    """Fit f^power = c/(T - t) by least squares on 1/f^power = (T - t)/c."""
    g = 1.0 / np.asarray(f, dtype=float) ** power
    slope, intercept = np.polyfit(np.asarray(t, dtype=float), g, 1)
    if slope >= 0:
        return math.inf
    return float(-intercept / slope)


def detect_blowup(stream: dict, thresholds: dict) -> BlowupDetection | None:
    """First threshold crossing among the indicators, with T* extrapolated.

    stream maps "t" and indicator names to equal-length arrays; thresholds
    maps indicator names to levels (None skips an indicator).  The fit uses
    the samples within a factor 4 of the crossing value of f^power.
    """
    t = np.asarray(stream["t"], dtype=float)
    best = None
    for name, thr in thresholds.items():
        if thr is None or name not in stream:
            continue
        f = np.asarray(stream[name], dtype=float)
        hits = np.flatnonzero(~(f < thr))
        if not hits.size:
            continue
        j = int(hits[0])
        if best is not None and t[j] >= best[1]:
            continue
        best = (name, t[j], j, thr)
    if best is None:
        return None
    name, t_cross, j, thr = best
    p = _DIVERGENCE_POWER.get(name, 1.0)
    f = np.asarray(stream[name], dtype=float)[: j + 1]
    tt = t[: j + 1]
    finite = np.isfinite(f) & (f > 0)
    g = np.where(finite, f, np.nan) ** p
    window = np.flatnonzero(finite & (g >= np.nanmax(g) / 4.0))
    if window.size < 3:
        window = np.arange(max(0, j - 7), j + 1)
    t_star = fit_blowup_time(tt[window], f[window], p)
    if not math.isfinite(t_star):
        t_star = float(t_cross)
    return BlowupDetection(float(t_star), float(t_cross), name, float(thr), int(window.size))


# ---------------------------------------------------------------------------
# full solve


def initial_field(u0: InitialCondition, transform: Transform) -> FieldPair:
    return u_to_v(u0(transform.x_grid()), transform)


def boundary_values(mode, barrier, v0, transform: Transform, t):
    if mode == "far_field":
        return None
    if mode == "frozen_dirichlet":
        return (v0[0], v0[-1])
    x = transform.zeta(transform.y[[0, -1]])
    z1 = transform.d1(transform.y[[0, -1]])
    vals = barrier(t, x) / z1**2
    return (float(vals[0]), float(vals[1]))


def _stable_dt(v, transform, config, r2, r3):
    vmax = max(float(np.max(v)), 1e-300)
    adv = float(np.max(np.abs(1.5 * r2 * v)))
    react = float(np.max(np.abs(r3 * v)))
    dt = config.dt_initial
    if adv > 0:
        dt = min(dt, config.cfl_advection * transform.dy / adv)
    if react > 0:
        dt = min(dt, config.cfl_reaction / react)
    if config.scheme == "explicit_cfl":
        dt = min(dt, 0.4 * transform.dy**2 / (vmax + config.eps_viscosity))
    return dt


def solve(u0: InitialCondition, case: DomainCase, transform: Transform,
          config: SolverConfig, override: bool = False,
          certificate: HypothesisCertificate | None = None,
          step_callback=None) -> SolveResult:
    """Integrate from u0 to t_end (or to detected blow-up).

    The data must pass the growth certificate unless `override` is set, in
    which case no barriers are available and bc_mode must not need them.
    step_callback(field, trusted_slice) runs at t = 0 and after every
    accepted step.
    """
    if case.quadratic and config.t_end >= 1.0 / case.kappa and not config.armed:
        raise ValueError(f"t_end={config.t_end} reaches 1/kappa={1.0 / case.kappa}; "
                         "arm blow-up detection to go this far")
    if transform.case != case:
        raise ValueError("transform was built for a different case")
    x = transform.x_grid()
    if certificate is None:
        certificate = validate_hypothesis(u0, case, x)
    pair = None
    if certificate.admissible:
        bcase = replace(case, K=max(case.K, certificate.K_found))
        pair = barrier_mod.barriers_for(bcase, 0.0, check=config.validate_barriers)
    elif not override:
        raise ValueError(f"initial data fail the growth hypothesis at node {certificate.node} "
                         f"({certificate.bound}); pass override=True to solve anyway")
    if config.bc_mode == "barrier_dirichlet" and pair is None:
        raise ValueError("barrier_dirichlet needs admissible data")

    field0 = initial_field(u0, transform)
    v0 = field0.v
    if config.bc_mode == "barrier_dirichlet":
        edge = boundary_values(config.bc_mode, pair[1], v0, transform, 0.0)
        if max(edge) > BARRIER_EDGE_RATIO * max(1.0, float(np.max(v0))):
            raise ValueError(f"barrier boundary data {max(edge):.3g} dwarf the initial field; "
                             "use bc_mode='far_field'")
    r2, r3 = _coefficients(transform)
    times = config.times()
    sup = pair[1] if pair is not None else None
    n = v0.size
    dy = transform.dy
    fixed_edge = 2 if config.bc_mode == "far_field" else 0
    collapsed = []

    # Errors made at an edge spread inward by diffusion and drift.  Each end
    # integrates the local speeds over its own zone (current margin plus one
    # unit of y), so growth far inside the domain does not eat the grid.
    buffer = int(math.ceil(1.0 / dy))
    edge_spread = [0.0, 0.0]
    edge_drift = [0.0, 0.0]

    def margin_nodes(side):
        margin = config.trust_sigmas * math.sqrt(edge_spread[side]) + edge_drift[side] + 2 * dy
        return max(fixed_edge, int(math.ceil(margin / dy)))

    def trust_slice():
        lo, hi = margin_nodes(0), n - margin_nodes(1)
        if hi - lo < 3:
            mid = n // 2
            lo, hi = mid - 1, mid + 2
            if not collapsed:
                log.warning("trust region collapsed to the central nodes")
                collapsed.append(True)
        return slice(lo, hi)

    def grow_margins(v, dt):
        speed = np.abs(1.5 * r2 * v)
        for side in (0, 1):
            w = min(n, margin_nodes(side) + buffer)
            zone = slice(0, w) if side == 0 else slice(n - w, n)
            edge_spread[side] += dt * float(np.max(v[zone]))
            edge_drift[side] += dt * float(np.max(speed[zone]))

    sl = trust_slice()
    traj = [field0]
    trust = [(sl.start, sl.stop)]
    diags = [compute_diagnostics(field0, transform, sl, pair)]
    stream = {"t": [0.0], "v_max": [], "lip_sqrt": [], "d2_sup": []}
    for key, val in zip(("v_max", "lip_sqrt", "d2_sup"), blowup_indicators(v0, transform, sl)):
        stream[key].append(val)
    thresholds = None
    if config.armed:
        thresholds = {"v_max": config.blowup_thresholds[0], "lip_sqrt": config.blowup_thresholds[1]}

    if step_callback is not None:
        step_callback(field0, sl)
    cur = field0
    status, t_star, t_fail = "completed", None, None
    max_clamp = 0.0
    n_steps = 0
    halvings_total = 0
    dt_min = math.inf
    k_snap = 1
    try:
        while k_snap < len(times):
            target = times[k_snap]
            halvings = 0
            while cur.t < target - 1e-14:
                dt = _stable_dt(cur.v, transform, config, r2, r3) * 0.5**halvings
                dt = min(dt, target - cur.t)
                if sup is not None and cur.t + dt >= sup.t_max:
                    raise StepFailure(cur.t, "reached the blow-up time of the boundary barrier")
                bc = boundary_values(config.bc_mode, sup, v0, transform, cur.t + dt)
                try:
                    new, clamped = _advance(cur, transform, config, dt, bc)
                except StepFailure as exc:
                    if "contract" not in exc.reason:
                        raise
                    halvings += 1
                    halvings_total += 1
                    if halvings >= 6:
                        raise
                    continue
                halvings = max(0, halvings - 1)
                max_clamp = max(max_clamp, clamped)
                grow_margins(new.v, dt)
                if target == times[-1] and abs(new.t - target) < 1e-12:
                    new = FieldPair(float(target), new.y, new.v)
                cur = new
                n_steps += 1
                dt_min = min(dt_min, dt)
                if n_steps > config.max_steps:
                    raise StepFailure(cur.t, "step budget exhausted")
                if step_callback is not None:
                    step_callback(cur, trust_slice())
                if thresholds is not None:
                    sl_now = trust_slice()
                    ind = blowup_indicators(cur.v, transform, sl_now)
                    stream["t"].append(cur.t)
                    for key, val in zip(("v_max", "lip_sqrt", "d2_sup"), ind):
                        stream[key].append(val)
                    det = detect_blowup(stream, thresholds)
                    if det is not None:
                        status, t_star = "blowup", det.t_star
                        break
            if status == "blowup":
                sl = trust_slice()
                traj.append(cur)
                trust.append((sl.start, sl.stop))
                diags.append(compute_diagnostics(cur, transform, sl, _usable(pair, cur.t)))
                break
            cur = FieldPair(float(target), cur.y, cur.v)
            sl = trust_slice()
            traj.append(cur)
            trust.append((sl.start, sl.stop))
            diags.append(compute_diagnostics(cur, transform, sl, _usable(pair, cur.t)))
            k_snap += 1
    except StepFailure as exc:
        status, t_fail = "step_failure", exc.t
        log.warning("%s", exc)
    if status == "blowup" and t_star is not None:
        t_star = min(t_star, max(cur.t, t_star))
    log.info("trust region at t=%.4g: nodes [%d, %d) of %d", cur.t, trust[-1][0], trust[-1][1], n)
    meta = {"n_steps": n_steps, "dt_min": dt_min if n_steps else None,
            "step_halvings": halvings_total, "max_clamp_rel": max_clamp,
            "clamp_within_roundoff": max_clamp <= CLAMP_RTOL,
            "transform": transform.describe()}
    return SolveResult(traj, status, diags, trust, transform, case, t_star, t_fail, pair,
                       certificate, {k: np.asarray(v) for k, v in stream.items()}, meta)


def _usable(pair, t):
    if pair is None or t >= pair[1].t_max:
        return None
    return pair


def run(u0: InitialCondition, case: DomainCase, config: SolverConfig, **kw) -> SolveResult:
    """Build the transform from config (dy, y_range) and solve."""
    transform = make_transform(case, config.y_range, config.dy)
    return solve(u0, case, transform, config, **kw)


def physical_fields(result: SolveResult, k: int = -1):
    """(x, u, u_x, u_xx) of snapshot k."""
    from .transform import v_to_u_derivatives

    field = result.trajectory[k]
    u, ux, uxx = v_to_u_derivatives(field, result.transform)
    return result.transform.x_grid(), u, ux, uxx
