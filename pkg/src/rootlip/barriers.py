"""Closed-form sub- and supersolutions.

A supersolution has NH[w] = dw/dt - 1/2 w d2w/dx2 >= 0 and a subsolution
NH[w] <= 0.  Ordered pairs bracket the solution (comparison principle), so
the solver uses them for boundary data and the tests use them as enclosures.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .transform import DomainCase, japanese

EPS = np.finfo(float).eps


class BlowupTimeError(ValueError):
    """Evaluation requested at or past the blow-up time of a barrier."""

    def __init__(self, t, t_blowup):
        super().__init__(f"t={t} is not before the blow-up time {t_blowup}")
        self.t_blowup = t_blowup


@dataclass(frozen=True)
class Barrier:
    kind: str
    is_super: bool
    fn: Callable
    params: dict = field(default_factory=dict)
    t_max: float = np.inf

    def __call__(self, t, x):
        if np.any(np.asarray(t) >= self.t_max):
            raise BlowupTimeError(t, self.t_max)
        return self.fn(t, np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "is_super": self.is_super,
                "t_max": None if np.isinf(self.t_max) else self.t_max,
                "params": _jsonable(self.params)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# finite-difference residual check


def nh_residual(barrier: Barrier, t, x, ht=None, hx=None):
    """Central-difference NH[w] at (t, x) together with a tolerance scale.

    Returns (residual, tol) with tol = 1e-6 times the size of the two terms
    plus a roundoff floor for the difference quotients.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if ht is None:
        ht = 1e-5 * np.maximum(1.0, np.abs(t))
    if hx is None:
        hx = 1e-3 * np.maximum(1.0, np.abs(x))
    w = barrier(t, x)
    wt = (barrier(t + ht, x) - barrier(t - ht, x)) / (2 * ht)
    wxx = (barrier(t, x + hx) - 2 * w + barrier(t, x - hx)) / hx**2
    res = wt - 0.5 * w * wxx
    roundoff = 10 * EPS * (np.abs(w) / ht + np.abs(w) ** 2 / hx**2)
    tol = 1e-6 * (np.abs(wt) + 0.5 * np.abs(w * wxx)) + roundoff
    return res, tol


def verification_grid(case: DomainCase, t_max: float, nt: int = 64, nx: int = 256,
                      rng: np.random.Generator | None = None):
    """Space-time points at which barrier inequalities are spot-checked.

    With rng given the points are drawn at random instead of on a lattice.
    """
    t_hi = 0.9 * t_max if np.isfinite(t_max) else 2.0
    t_lo = 1e-3 * t_hi
    if case.kind == "interval":
        x_lo, x_hi = 1e-3 * case.L, case.L * (1 - 1e-3)
    elif case.kind == "half_line":
        x_lo, x_hi = 1e-2, 10.0
    else:
        x_lo, x_hi = -10.0, 10.0
    if rng is None:
        t = np.linspace(t_lo, t_hi, nt)
        x = np.linspace(x_lo, x_hi, nx)
        return np.meshgrid(t, x, indexing="ij")
    return rng.uniform(t_lo, t_hi, nt * nx), rng.uniform(x_lo, x_hi, nt * nx)


def check_barrier(barrier: Barrier, case: DomainCase, rng=None):
    """Largest signed violation of the barrier inequality (<= 0 means valid)."""
    tt, xx = verification_grid(case, barrier.t_max, rng=rng)
    res, tol = nh_residual(barrier, tt, xx)
    if case.kind != "line":
        # the FD stencil must stay inside the interval
        hx = 1e-3 * np.maximum(1.0, np.abs(xx))
        inside = case.distance(xx) > hx
        res, tol = res[inside], tol[inside]
    signed = -res if barrier.is_super else res
    return float(np.max(signed - tol))


def validate(barrier: Barrier, case: DomainCase) -> Barrier:
    excess = check_barrier(barrier, case)
    if excess > 0:
        side = "super" if barrier.is_super else "sub"
        raise ValueError(f"{barrier.kind} fails the {side}solution check by {excess:.3g}")
    return barrier


# ---------------------------------------------------------------------------
# explicit solutions


def quadratic_solution(a: float, b: float, c: float) -> Barrier:
    """Q(t, x) = (a x^2 + b x + c) / (1 - a t), an exact solution."""

    def fn(t, x):
        return (a * x**2 + b * x + c) / (1.0 - a * t)

    t_max = 1.0 / a if a > 0 else np.inf
    return Barrier("quadratic", True, fn, {"a": a, "b": b, "c": c}, t_max)


# ---------------------------------------------------------------------------
# piecewise-quadratic lower profile


@dataclass(frozen=True)
class GProfile:
    """Piecewise quadratic (with an optional power tail) in the distance s.

    Piece i on [breaks[i], breaks[i+1]] is c0 + c1 (s - breaks[i]) +
    c2 (s - breaks[i])**2.  Beyond the last break, G = tail_coef * s**gamma.
    """

    breaks: tuple
    coefs: tuple
    tail_coef: float | None = None
    gamma: float = 2.0

    def __call__(self, s, order=0):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for (lo, hi), (c0, c1, c2) in zip(zip(self.breaks[:-1], self.breaks[1:]), self.coefs):
            m = (s >= lo) & (s <= hi)
            r = s[m] - lo
            out[m] = (c0 + c1 * r + c2 * r**2, c1 + 2 * c2 * r, 2 * c2 + 0 * r)[order]
        if self.tail_coef is not None:
            m = s > self.breaks[-1]
            g = self.gamma
            sm = s[m]
            out[m] = self.tail_coef * (sm**g, g * sm ** (g - 1), g * (g - 1) * sm ** (g - 2))[order]
        return out

    def to_dict(self):
        return {"breaks": list(self.breaks), "coefs": [list(c) for c in self.coefs],
                "tail_coef": self.tail_coef, "gamma": self.gamma}


def _cap_piece(x1):
    """2 s^2 up to x1, then the concave quadratic with G'' = -4."""
    return (2 * x1**2, 4 * x1, -2.0)


def interval_profile(L: float) -> GProfile:
    """d^2 <= G <= 2 d^2 on (0, L/2] with |G''| = 4, as a function of d."""
    x1 = L / 4
    return GProfile(breaks=(0.0, x1, L / 2), coefs=((0.0, 0.0, 2.0), _cap_piece(x1)))


def half_line_profile(gamma: float, n_candidates: int = 141) -> GProfile:
    """x^2 ^ x^gamma <= G <= 2 (x^2 ^ x^gamma) with |G''| <= 4.

    G = 2 x^2 near 0, a concave cap with G'' = -4 from x1 to x2, and
    c x^gamma beyond, joined in C^1.  x1 is picked by scanning candidates
    for the widest envelope margin.
    """
    if gamma == 2:
        return GProfile(breaks=(0.0, np.inf), coefs=((0.0, 0.0, 2.0),))
    s_check = np.concatenate([np.linspace(1e-3, 3.0, 3000), np.geomspace(3.0, 1e4, 400)])
    m = np.minimum(s_check**2, s_check**gamma)
    best, best_margin = None, -np.inf
    root = np.sqrt(64 - 64 * gamma + 32 * gamma**2)
    for x1 in np.linspace(0.3, 1.0, n_candidates):
        # C^1 join with c x^gamma: G'(x2) x2 = gamma G(x2)
        x2 = x1 * (8 * (1 - gamma) + root) / (8 - 4 * gamma)
        if not x2 > x1:
            continue
        c0, c1, c2 = _cap_piece(x1)
        r = x2 - x1
        g2 = c0 + c1 * r + c2 * r**2
        prof = GProfile(breaks=(0.0, x1, x2), coefs=((0.0, 0.0, 2.0), (c0, c1, c2)),
                        tail_coef=g2 / x2**gamma, gamma=gamma)
        G = prof(s_check)
        margin = min(np.min(G / m - 1.0), np.min(2.0 - G / m),
                     4.0 - np.max(np.abs(prof(s_check, 2))))
        if margin > best_margin:
            best, best_margin = prof, margin
    if best is None or best_margin < 0:
        raise RuntimeError(f"no admissible lower profile found for gamma={gamma}")
    return best


# ---------------------------------------------------------------------------
# barrier families


def _check_kind(case, kind):
    if case.kind != kind:
        raise ValueError(f"expected a {kind} case, got {case.kind}")


def interval_barriers(case: DomainCase, eps: float = 0.0, check: bool = True):
    """(sub, super) on (0, L): (G + eps)/(2(t + K)) and (d^2 + eps/kappa)/(1/kappa - t)."""
    _check_kind(case, "interval")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    kappa, K = case.kappa, case.K
    G = interval_profile(case.L)

    def sup_fn(t, x):
        d = case.distance(x)
        return (d**2 + eps / kappa) / (1.0 / kappa - t)

    def sub_fn(t, x):
        d = case.distance(x)
        return np.where(d > 0, G(d) + eps, 0.0) / (2.0 * (t + K))

    sub = Barrier("interval_sub", False, sub_fn, {"K": K, "eps": eps, "G": G.to_dict()})
    sup = Barrier("interval_super", True, sup_fn, {"kappa": kappa, "eps": eps}, 1.0 / kappa)
    if check:
        validate(sub, case), validate(sup, case)
    return sub, sup


def compute_D(K: float, gamma: float) -> float:
    """D with D e^{Kt} >= K [4K(t+1)^2]^(4/(2-gamma)) for all t >= 0.

    The maximum of the ratio is located numerically and inflated by 1%.
    """
    if gamma >= 2:
        raise ValueError("D is only defined for gamma < 2")
    if K < 1:
        raise ValueError("K must be >= 1")
    p = 4.0 / (2.0 - gamma)

    def neg_log_ratio(t):
        return -(np.log(K) + p * np.log(4 * K) + 2 * p * np.log1p(t) - K * t)

    t_hi = max(10.0, 8 * p / K)
    res = optimize.minimize_scalar(neg_log_ratio, bounds=(0.0, t_hi), method="bounded",
                                   options={"xatol": 1e-10})
    log_max = max(-res.fun, -neg_log_ratio(0.0))
    if log_max > 700:
        raise OverflowError(f"D(K={K}, gamma={gamma}) exceeds double range")
    return 1.01 * float(np.exp(log_max))


def a_of_t(t):
    """a(t) = 2 - 1/(t+1), rising from 1 towards 2."""
    return 2.0 - 1.0 / (np.asarray(t, dtype=float) + 1.0)


def _subquadratic_super(K, gamma, D):
    def fn(t, x):
        return K * a_of_t(t) * japanese(x, gamma) + D * np.exp(3.0 * K * t)
    return fn


def line_barriers(case: DomainCase, check: bool = True):
    """(sub, super) on the whole line for quadratic or power-law growth."""
    _check_kind(case, "line")
    kappa, K, gamma = case.kappa, case.K, case.gamma
    if case.quadratic:
        sub = Barrier("line_quad_sub", False, lambda t, x: japanese(x, 2.0) / K + 0 * t, {"K": K})
        sup = Barrier("line_quad_super", True,
                      lambda t, x: (x**2 + K / kappa) / (1.0 / kappa - t),
                      {"kappa": kappa, "K": K}, 1.0 / kappa)
    else:
        D = compute_D(K, gamma)
        sub = Barrier("line_power_sub", False,
                      lambda t, x: japanese(x, gamma) / (t + K), {"K": K, "gamma": gamma})
        sup = Barrier("line_power_super", True, _subquadratic_super(K, gamma, D),
                      {"K": K, "gamma": gamma, "D": D})
    if check:
        validate(sub, case), validate(sup, case)
    return sub, sup


def half_line_barriers(case: DomainCase, eps: float = 0.0, check: bool = True):
    """(sub, super) on the half line; the super caps the quadratic barrier
    by the power-law one when gamma < 2."""
    _check_kind(case, "half_line")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    kappa, K, gamma = case.kappa, case.K, case.gamma
    G = half_line_profile(gamma)

    def quad(t, x):
        return (x**2 + eps / kappa) / (1.0 / kappa - t)

    params = {"kappa": kappa, "eps": eps}
    if case.quadratic:
        sup_fn = quad
    else:
        D = compute_D(K, gamma)
        power = _subquadratic_super(K, gamma, D)
        params.update(K=K, gamma=gamma, D=D)

        def sup_fn(t, x):
            return np.minimum(quad(t, x), power(t, x))

    def sub_fn(t, x):
        return np.where(x > 0, G(x) + eps, 0.0) / (2.0 * (t + K))

    sub = Barrier("half_line_sub", False, sub_fn, {"K": K, "eps": eps, "G": G.to_dict()})
    sup = Barrier("half_line_super", True, sup_fn, params, 1.0 / kappa)
    if check:
        validate(sub, case), validate(sup, case)
    return sub, sup


def barriers_for(case: DomainCase, eps: float = 0.0, check: bool = True):
    if case.kind == "interval":
        return interval_barriers(case, eps, check)
    if case.kind == "half_line":
        return half_line_barriers(case, eps, check)
    return line_barriers(case, check)
