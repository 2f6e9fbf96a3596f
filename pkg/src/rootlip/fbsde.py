"""Monte Carlo for the forward SDE dX = sqrt(u(T - t, X)) dB driven by a
computed solution u.

E[u0(X_T) | X_t = x] = u(T - t, x), so path averages can be checked against
the PDE solution directly.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .solver import SolveResult

CHUNK = 16384


@dataclass
class PathEnsemble:
    n_paths: int
    dt_sde: float
    x0: float
    T: float
    rng_seed: int
    terminal_values: np.ndarray
    x_terminal: np.ndarray
    exited: np.ndarray
    near_zero: int
    recorded: dict = field(default_factory=dict)
    mean_u_integral: float = math.nan

    @property
    def exit_fraction(self) -> float:
        return float(np.mean(self.exited))

    @property
    def valid(self) -> bool:
        return self.exit_fraction < 0.01

    def mean_and_se(self) -> tuple[float, float]:
        return _mean_se(self.terminal_values)

    def summary(self) -> dict:
        m, se = self.mean_and_se()
        return {"n_paths": self.n_paths, "dt_sde": self.dt_sde, "x0": self.x0, "T": self.T,
                "seed": self.rng_seed, "exit_fraction": self.exit_fraction,
                "near_zero_paths": self.near_zero, "mean": m, "se": se}


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    # numpy's pairwise summation: fixed order for a fixed array length
    m = float(np.sum(v)) / v.size
    var = float(np.sum((v - m) ** 2)) / max(v.size - 1, 1)
    return m, math.sqrt(var / v.size)


def _standardized(diff: float, se: float, ref: float) -> float:
    """diff / se, except that a roundoff-sized se (all samples equal) asks for
    agreement to roundoff instead of dividing by it."""
    tiny = 1e-12 * max(1.0, abs(ref))
    if se > tiny:
        return diff / se
    return 0.0 if abs(diff) <= tiny else math.copysign(math.inf, diff)


class FieldInterpolant:
    """u(t, x) from solver snapshots: sqrt(u) linear in t and in x.

    Only nodes trusted at every snapshot are used; `u0` (if given) replaces
    the interpolant at t = 0 exactly.
    """

    def __init__(self, result: SolveResult, u0=None):
        tr = result.transform
        lo = max(a for a, _ in result.trust)
        hi = min(b for _, b in result.trust)
        x = tr.x_grid()[lo:hi]
        z1sq = tr.d1(tr.y)[lo:hi] ** 2
        self.x = x
        self.y0 = float(tr.y[lo])
        self.dy = tr.dy
        self.inverse = tr.inverse
        self.t = result.times
        self.root = np.sqrt(np.array([z1sq * f.v[lo:hi] for f in result.trajectory]))
        self.u0 = u0

    @property
    def x_range(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def root_row(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.t, t, side="right")) - 1
        k = min(max(k, 0), self.t.size - 2)
        w = (t - self.t[k]) / (self.t[k + 1] - self.t[k])
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * self.root[k] + w * self.root[k + 1]

    def sqrt_u(self, t: float, X) -> np.ndarray:
        return np.interp(X, self.x, self.root_row(t))

    def bracket(self, X) -> np.ndarray:
        """Index k with x[k] <= X < x[k+1] (clipped to the table)."""
        last = self.x.size - 2
        if self.inverse is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (self.inverse(X) - self.y0) / self.dy
            k = np.clip(np.nan_to_num(s, nan=0.0, posinf=last, neginf=0), 0, last).astype(np.int64)
            # roundoff in the inverse can put X one cell off
            k -= (X < self.x[k]) & (k > 0)
            k += (X >= self.x[k + 1]) & (k < last)
            return k
        return np.clip(np.searchsorted(self.x, X, side="right") - 1, 0, last)

    def sqrt_u_bracketed(self, t: float, X, k) -> np.ndarray:
        row = self.root_row(t)
        slope = np.diff(row) / np.diff(self.x)
        # X is kept inside the table, so no extrapolation happens here
        return row[k] + slope[k] * (X - self.x[k])

    def u(self, t: float, X) -> np.ndarray:
        if t == 0.0 and self.u0 is not None:
            return np.asarray(self.u0(X), dtype=float)
        return self.sqrt_u(t, X) ** 2


def _streams(seed: int, n_paths: int):
    """One counter-based generator per fixed-size chunk of paths."""
    n_chunks = -(-n_paths // CHUNK)
    gens = [np.random.Generator(np.random.Philox(key=np.array([seed, c], dtype=np.uint64)))
            for c in range(n_chunks)]
    sizes = [min(CHUNK, n_paths - c * CHUNK) for c in range(n_chunks)]
    return gens, sizes


def simulate_paths(u_trajectory: SolveResult, x0: float, T: float, n_paths: int,
                   dt_sde: float | None = None, seed: int = 0, u0=None,
                   record_times=()) -> PathEnsemble:
    """Euler-Maruyama for dX = sqrt(u(T - s, X)) dB from X(0) = x0.

    Paths leaving the trusted x-range are frozen and flagged.  X is stored
    at each SDE time in `record_times` (rounded to the step grid).
    """
    if T > u_trajectory.times[-1] + 1e-12:
        raise ValueError(f"T={T} is beyond the trajectory horizon {u_trajectory.times[-1]}")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    field_ = FieldInterpolant(u_trajectory, u0)
    x_lo, x_hi = field_.x_range
    if not x_lo < x0 < x_hi:
        raise ValueError(f"x0={x0} lies outside the trusted range [{x_lo}, {x_hi}]")
    if dt_sde is None:
        dt_sde = T / 2000
    n_steps = max(1, int(round(T / dt_sde)))
    dt = T / n_steps
    sq = math.sqrt(dt)
    record_steps = {int(round(s / dt)): s for s in record_times}
    gens, sizes = _streams(seed, n_paths)
    X = np.full(n_paths, float(x0))
    alive = np.ones(n_paths, dtype=bool)
    exited = np.zeros(n_paths, dtype=bool)
    case = u_trajectory.case
    zero_guard = u_trajectory.transform.dy
    near_zero = np.zeros(n_paths, dtype=bool)
    recorded = {}
    mean_u = []
    for n in range(n_steps + 1):
        if n in record_steps:
            recorded[record_steps[n]] = X.copy()
        if n == n_steps:
            break
        tau = T - n * dt
        k = field_.bracket(X)
        root = field_.sqrt_u_bracketed(tau, X, k)
        mean_u.append(float(np.dot(root, root)) / n_paths)
        dB = np.concatenate([g.standard_normal(s) for g, s in zip(gens, sizes)]) * sq
        X = np.where(alive, X + root * dB, X)
        out = alive & ((X <= x_lo) | (X >= x_hi))
        if out.any():
            exited |= out
            alive &= ~out
            X = np.clip(X, x_lo, x_hi)
        if case.kind != "line":
            near_zero |= case.distance(X) < zero_guard
    terminal = field_.u(0.0, X)
    integral = math.fsum(mean_u) * dt
    return PathEnsemble(n_paths, dt, float(x0), float(T), int(seed), terminal, X, exited,
                        int(near_zero.sum()), recorded, integral)


def weak_error_estimate(u_trajectory: SolveResult, x0: float, T: float, n_paths: int,
                        dt_sde: float | None = None, seed: int = 0, u0=None) -> dict:
    """Change in E[u0(X_T)] when dt_sde is doubled, with the same seed.

    Euler-Maruyama has weak order one, so the fine-step bias is about this
    difference.  Sharing the seed does not couple the two Brownian paths
    (different step counts draw different normals), so the SE is reported
    alongside for judging significance.
    """
    if dt_sde is None:
        dt_sde = T / 2000
    fine = simulate_paths(u_trajectory, x0, T, n_paths, dt_sde, seed, u0)
    coarse = simulate_paths(u_trajectory, x0, T, n_paths, 2 * dt_sde, seed, u0)
    mf, sf = fine.mean_and_se()
    mc, sc = coarse.mean_and_se()
    return {"dt_sde": fine.dt_sde, "mean_fine": mf, "mean_coarse": mc,
            "weak_error_estimate": mf - mc, "se": math.hypot(sf, sc)}


def check_decoupling(ensemble: PathEnsemble, u_trajectory: SolveResult, t_check: float,
                     x_bins=20, min_count: int = 500, u0=None) -> dict:
    """Conditional means of u0(X_T) given X(t_check) against u(T - t_check, .).

    Each populated bin is compared with the in-bin average of
    u(T - t_check, X(t_check)); the bin-centre value is reported as well.
    """
    if t_check not in ensemble.recorded:
        raise KeyError(f"X was not recorded at t={t_check}")
    if not ensemble.valid:
        raise ValueError(f"exit fraction {ensemble.exit_fraction:.3g} is too large")
    field_ = FieldInterpolant(u_trajectory, u0)
    Xt = ensemble.recorded[t_check]
    tau = ensemble.T - t_check
    ok = ~ensemble.exited
    if np.ptp(Xt[ok]) == 0:
        edges = np.array([Xt[ok][0] - 0.5, Xt[ok][0] + 0.5])
    elif np.isscalar(x_bins):
        lo, hi = np.quantile(Xt[ok], [0.005, 0.995])
        edges = np.linspace(lo, hi, int(x_bins) + 1)
    else:
        edges = np.asarray(x_bins, dtype=float)
    idx = np.digitize(Xt, edges) - 1
    bins = []
    for j in range(edges.size - 1):
        m = ok & (idx == j)
        cnt = int(m.sum())
        if cnt < min_count:
            continue
        mean, se = _mean_se(ensemble.terminal_values[m])
        ref = float(np.sum(field_.u(tau, Xt[m]))) / cnt
        centre = float(field_.u(tau, np.array([0.5 * (edges[j] + edges[j + 1])]))[0])
        resid = _standardized(mean - ref, se, ref)
        bins.append({"lo": float(edges[j]), "hi": float(edges[j + 1]), "count": cnt,
                     "mean": mean, "se": se, "reference": ref, "centre_value": centre,
                     "standardized": resid})
    worst = max((abs(b["standardized"]) for b in bins), default=math.nan)
    return {"t_check": t_check, "bins": bins, "max_standardized": worst,
            "inconclusive": len(bins) == 0, "passed": bool(bins) and worst <= 3.0}


def martingale_check(ensemble: PathEnsemble, u_trajectory: SolveResult, u0=None) -> dict:
    """Y(s) = u(T - s, X_s) should have constant mean; compare with Y(0)."""
    field_ = FieldInterpolant(u_trajectory, u0)
    y0 = float(field_.u(ensemble.T, np.array([ensemble.x0]))[0])
    rows = []
    for s in sorted(ensemble.recorded):
        Y = field_.u(ensemble.T - s, ensemble.recorded[s])
        m, se = _mean_se(Y)
        z = _standardized(m - y0, se, y0)
        rows.append({"t": s, "mean": m, "se": se, "standardized": z})
    return {"Y0": y0, "rows": rows,
            "passed": all(abs(r["standardized"]) <= 3.0 for r in rows)}


def variance_check(ensemble: PathEnsemble) -> dict:
    """Var X_T against int_0^T E[u(T - s, X_s)] ds (driftless Ito isometry)."""
    sq = (ensemble.x_terminal - ensemble.x0) ** 2
    m, se = _mean_se(sq)
    z = (m - ensemble.mean_u_integral) / se if se > 0 else 0.0
    return {"second_moment": m, "se": se, "integral": ensemble.mean_u_integral,
            "standardized": z, "passed": abs(z) <= 3.0}


def write_terminal_dump(path, values) -> None:
    """uint64 little-endian count, then float64 little-endian values."""
    v = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", v.size))
        fh.write(v.tobytes())


def read_terminal_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n:
        raise ValueError(f"dump declares {n} values but holds {data.size}")
    return data.astype(float)
