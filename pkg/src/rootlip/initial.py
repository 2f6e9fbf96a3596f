"""Initial data: named families, sampled tables and the growth certificate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .transform import DomainCase, japanese


@dataclass(frozen=True)
class InitialCondition:
    """u0 as a callable of the physical coordinate x.

    `fn` receives an array of x values inside the interval and must return
    nonnegative values.  `params` is what gets written to manifests.
    """

    name: str
    fn: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def scaled(self, factor: float) -> "InitialCondition":
        params = dict(self.params, scale=self.params.get("scale", 1.0) * factor)
        return InitialCondition(self.name, lambda x: factor * self.fn(x), params)


# ---------------------------------------------------------------------------
# families


def quadratic(case: DomainCase, a: float | None = None) -> InitialCondition:
    """a x^2 (a defaults to kappa), the exact solution a x^2/(1 - a t)."""
    a = case.kappa if a is None else float(a)
    return InitialCondition("quadratic", lambda x: a * x**2, {"a": a})


def quadratic_plus_one(case: DomainCase, a: float = 1.0, c: float = 1.0) -> InitialCondition:
    return InitialCondition("quadratic_plus_one", lambda x: a * x**2 + c, {"a": a, "c": c})


def power_law(case: DomainCase, gamma: float | None = None, A: float = 1.0) -> InitialCondition:
    """A <x>^gamma on the line, A x^2 <x>^(gamma-2) on the half line."""
    g = case.gamma if gamma is None else float(gamma)
    if case.kind == "half_line":
        fn = lambda x: A * x**2 * japanese(x, g - 2.0)  # noqa: E731
    else:
        fn = lambda x: A * japanese(x, g)  # noqa: E731
    return InitialCondition("power_law", fn, {"gamma": g, "A": A})


def bump_on_interval(case: DomainCase, A: float = 1.0) -> InitialCondition:
    """A x^2 (L - x)^2 / L^2 on (0, L); quadratic at both ends."""
    L = case.L
    return InitialCondition("bump_on_interval",
                            lambda x: A * (x * (L - x)) ** 2 / L**2, {"A": A, "L": L})


def smooth_bump(x, center: float, width: float):
    """C-infinity bump of height 1 supported on |x - center| < width."""
    s = (np.asarray(x, dtype=float) - center) / width
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def quadratic_plus_bump(case: DomainCase, lam: float | None = None, height: float = 0.05,
                        center: float = 4.0, width: float = 1.5,
                        target_b: float | None = None) -> InitialCondition:
    """kappa x^2 plus a nonnegative bump.

    With `lam` set, the bump is the blow-up witness x^2 theta(log x) built by
    `experiments.build_theta_lambda`; otherwise it is `height` times a smooth
    bump in x around `center`.
    """
    kappa = case.kappa
    if lam is not None:
        from .experiments import build_theta_lambda

        con = build_theta_lambda(kappa, lam, target_b)

        def fn(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore"):
                y = np.log(x)
            return kappa * x**2 + np.where(x > 0, x**2 * con.theta(y), 0.0)

        return InitialCondition("quadratic_plus_bump", fn,
                                {"kappa": kappa, "lam": lam, "b": con.b, "M": con.M})

    def fn(x):
        return kappa * x**2 + height * smooth_bump(x, center, width)

    return InitialCondition("quadratic_plus_bump", fn,
                            {"kappa": kappa, "height": height, "center": center, "width": width})


def modulated(case: DomainCase, coeffs=(0.0,), base_scale: float = 1.0) -> InitialCondition:
    """Growth profile of the case times exp(sum_k c_k sin(k s)).

    s is x/L on the interval and asinh(x) otherwise.  With |c| small this is
    a smooth positive perturbation that keeps the two-sided growth bounds.
    """
    coeffs = tuple(float(c) for c in coeffs)
    L, g = case.L, case.gamma

    def modulation(s):
        out = np.zeros_like(s)
        for k, c in enumerate(coeffs, start=1):
            out += c * np.sin(k * s)
        return np.exp(out)

    def fn(x):
        x = np.asarray(x, dtype=float)
        if case.kind == "interval":
            base = (x * (L - x) / L) ** 2
            s = np.pi * x / L
        elif case.kind == "half_line":
            base = x**2 * japanese(x, g - 2.0)
            s = np.arcsinh(x)
        else:
            base = japanese(x, g)
            s = np.arcsinh(x)
        return base_scale * base * modulation(s)

    return InitialCondition("modulated", fn, {"coeffs": list(coeffs), "base_scale": base_scale})


def from_table(x_values, u_values, name: str = "table") -> InitialCondition:
    """Shape-preserving interpolant of sampled (x, u0) rows in any order.

    Queries outside the sampled range raise, so the table must cover the
    computational grid.
    """
    x = np.asarray(x_values, dtype=float)
    u = np.asarray(u_values, dtype=float)
    if x.shape != u.shape or x.ndim != 1:
        raise ValueError("table columns must be 1-D and of equal length")
    order = np.argsort(x, kind="stable")
    x, u = x[order], u[order]
    if np.any(np.diff(x) <= 0):
        raise ValueError("table x values must be distinct")
    if np.any(u < 0):
        i = int(order[np.flatnonzero(u < 0)[0]])
        raise ValueError(f"table row {i} has negative u0")
    interp = PchipInterpolator(x, u, extrapolate=False)
    lo, hi = x[0], x[-1]

    def fn(q):
        q = np.asarray(q, dtype=float)
        if q.size and (q.min() < lo or q.max() > hi):
            raise ValueError(f"table covers [{lo}, {hi}], queried [{q.min()}, {q.max()}]")
        return np.maximum(interp(q), 0.0)

    return InitialCondition(name, fn, {"rows": int(x.size)})


FAMILIES = {
    "quadratic": quadratic,
    "quadratic_plus_one": quadratic_plus_one,
    "power_law": power_law,
    "bump_on_interval": bump_on_interval,
    "quadratic_plus_bump": quadratic_plus_bump,
    "modulated": modulated,
}

# where each family satisfies the growth hypothesis (shown by `rootlip list`)
FAMILY_RANGES = {
    "quadratic": "half_line, gamma=2, a <= kappa",
    "quadratic_plus_one": "line, gamma=2, a <= kappa",
    "power_law": "line or half_line, any gamma in [0, 2], A <= kappa when gamma=2",
    "bump_on_interval": "interval, A <= kappa",
    "quadratic_plus_bump": "half_line, gamma=2; exceeds kappa x^2 so needs the override flag",
    "modulated": "any case with kappa >= sup u0/d^2",
}


def make_initial(family: str, case: DomainCase, **params) -> InitialCondition:
    if family not in FAMILIES:
        raise ValueError(f"unknown initial-condition family {family!r}; known: {sorted(FAMILIES)}")
    return FAMILIES[family](case, **params)


# ---------------------------------------------------------------------------
# growth certificate


@dataclass(frozen=True)
class HypothesisCertificate:
    """Outcome of checking the two-sided growth envelope on a grid.

    K_found is the smallest K >= 1 for which every K-dependent bound holds
    at every node.  A violation names the first failing node and bound.
    """

    case: DomainCase
    K_found: float
    lip_sqrt_u0: float
    verdict: str
    node: int | None = None
    bound: str | None = None

    @property
    def admissible(self) -> bool:
        return self.verdict == "admissible"

    def to_dict(self) -> dict:
        return {"case": self.case.to_dict(), "K_found": self.K_found,
                "lip_sqrt_u0": self.lip_sqrt_u0, "verdict": self.verdict,
                "node": self.node, "bound": self.bound}


def lip_sqrt_on_grid(u, x) -> float:
    r = np.sqrt(np.maximum(np.asarray(u, dtype=float), 0.0))
    return float(np.max(np.abs(np.diff(r)) / np.diff(x)))


def _required_K(case: DomainCase, x, u):
    """Per-node lower limits on K (lower bound, then K-dependent upper bounds)
    and the K-free upper-bound check.  Returns (K_lower, K_upper, ok_fixed)."""
    kappa, g = case.kappa, case.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        if case.kind == "interval":
            d2 = case.distance(x) ** 2
            k_low = d2 / u
            k_up = np.ones_like(x)
            ok_fixed = u <= kappa * d2 * (1 + 1e-12)
        elif case.kind == "line":
            k_low = japanese(x, g) / u
            k_up = np.maximum(u - kappa * x**2, u / japanese(x, g))
            ok_fixed = np.ones_like(x, dtype=bool)
        else:
            m = np.minimum(x**2, x**g)
            k_low = m / u
            k_up = u / x**g
            ok_fixed = u <= kappa * x**2 * (1 + 1e-12)
    k_low = np.where(np.isnan(k_low), np.inf, k_low)
    return k_low, k_up, ok_fixed


def validate_hypothesis(u0: InitialCondition | np.ndarray, case: DomainCase, x) -> HypothesisCertificate:
    """Check the growth envelope of u0 on the nodes x (inside the interval).

    Every K-dependent inequality is monotone in K, so the smallest admissible
    K is the maximum of the per-node requirements.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u0(x) if callable(u0) else u0, dtype=float)
    if u.shape != x.shape:
        raise ValueError("u0 samples and grid differ in shape")
    neg = np.flatnonzero(~(u >= 0))
    if neg.size:
        raise ValueError(f"u0 must be nonnegative; node {int(neg[0])} holds {u[neg[0]]!r}")
    lip = lip_sqrt_on_grid(u, x)
    k_low, k_up, ok_fixed = _required_K(case, x, u)
    K = float(max(1.0, np.max(k_low), np.max(k_up)))
    if not np.all(ok_fixed):
        i = int(np.flatnonzero(~ok_fixed)[0])
        return HypothesisCertificate(case, K, lip, "violated", i, "upper: kappa d^2")
    if not np.isfinite(K):
        i = int(np.flatnonzero(~np.isfinite(k_low))[0])
        return HypothesisCertificate(case, K, lip, "violated", i, "lower: positivity")
    if not np.isfinite(lip):
        return HypothesisCertificate(case, K, lip, "violated", None, "root-Lipschitz")
    return HypothesisCertificate(case, K, lip, "admissible")


def bounds_hold(case: DomainCase, x, u, K: float) -> bool:
    """Direct evaluation of the envelope at fixed K (bisection oracle)."""
    kappa, g = case.kappa, case.gamma
    tol = 1 + 1e-12
    if case.kind == "interval":
        d2 = case.distance(x) ** 2
        return bool(np.all(d2 / K <= u * tol) and np.all(u <= kappa * d2 * tol))
    if case.kind == "line":
        jx = japanese(x, g)
        return bool(np.all(jx / K <= u * tol)
                    and np.all(u <= np.minimum(kappa * x**2 + K, K * jx) * tol))
    m = np.minimum(x**2, x**g)
    return bool(np.all(m / K <= u * tol)
                and np.all(u <= np.minimum(kappa * x**2, K * x**g) * tol))
