"""Interval cases, coordinate maps and the u <-> v conversion.

The equation du/dt = 1/2 u d2u/dx2 is degenerate where u vanishes and has
unbounded diffusivity at infinity.  Writing x = zeta(y) and

    v(t, y) = zeta'(y)**-2 * u(t, zeta(y))

turns it into an equation that is uniformly parabolic whenever v ~ 1.  Each
interval (bounded, whole line, half line) and growth exponent gamma gets its
own map zeta.  Where zeta has no closed form it is integrated numerically and
cached on the computational grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

log = logging.getLogger(__name__)

KINDS = ("interval", "line", "half_line")

# |clamped value| <= CLAMP_RTOL * scale is treated as roundoff
CLAMP_RTOL = 1e-12


def japanese(x, power=1.0):
    """<x>**power with <x> = sqrt(1 + x**2)."""
    return np.power(1.0 + np.square(x), 0.5 * power)


def japanese_d2(x, gamma):
    """Second derivative of <x>**gamma, gamma[(gamma-1)x^2+1]<x>^(gamma-4)."""
    x = np.asarray(x, dtype=float)
    return gamma * ((gamma - 1.0) * x**2 + 1.0) * japanese(x, gamma - 4.0)


@dataclass(frozen=True)
class DomainCase:
    """Which interval the problem lives on, plus the growth constants.

    kind is one of "interval" (0, L), "line" or "half_line".  gamma is the
    power-law growth exponent of the data at infinity (ignored for the
    bounded interval), kappa caps quadratic growth and K is the two-sided
    hypothesis constant.
    """

    kind: str
    kappa: float = 1.0
    K: float = 1.0
    gamma: float = 2.0
    L: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.K >= 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0 <= self.gamma <= 2:
            raise ValueError(f"gamma must lie in [0, 2], got {self.gamma}")
        if self.kind == "interval" and not self.L > 0:
            raise ValueError(f"interval length must be positive, got {self.L}")

    @property
    def quadratic(self) -> bool:
        return self.gamma == 2

    def distance(self, x):
        """Distance to the complement of the interval (inf on the line)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "line":
            return np.full_like(x, np.inf)
        if self.kind == "half_line":
            return np.maximum(x, 0.0)
        return np.clip(np.minimum(x, self.L - x), 0.0, None)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kappa": self.kappa, "K": self.K,
                "gamma": self.gamma, "L": self.L}


# ---------------------------------------------------------------------------
# smooth partition of unity


def _expm_inv(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s, order=0):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, built from exp(-1/s).

    order selects the value (0) or its first (1) or second (2) derivative.
    """
    s = np.asarray(s, dtype=float)
    f = _expm_inv(s)
    g = _expm_inv(1.0 - s)
    h = f + g
    if order == 0:
        return f / h
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(s > 0, f / s**2, 0.0)
        g1 = np.where(s < 1, -g / (1.0 - s) ** 2, 0.0)
        num = f1 * g - f * g1
        if order == 1:
            return num / h**2
        f2 = np.where(s > 0, f * (1.0 - 2.0 * s) / s**4, 0.0)
        r = 1.0 - s
        g2 = np.where(s < 1, g * (1.0 - 2.0 * r) / r**4, 0.0)
        dnum = f2 * g - f * g2
        return (dnum * h - 2.0 * num * (f1 + g1)) / h**3
    # unreachable


def cutoff(z, order=0):
    """psi(z): 1 for z <= -1, 0 for z >= 1, smooth in between."""
    s = 0.5 * (np.asarray(z, dtype=float) + 1.0)
    if order == 0:
        return 1.0 - smooth_step(s)
    return -smooth_step(s, order) * 0.5**order


# ---------------------------------------------------------------------------
# transforms


@dataclass(frozen=True)
class Transform:
    """zeta and its first three derivatives on a uniform y-grid.

    ratio2 = zeta''/zeta' and ratio3 = zeta'''/zeta' are supplied in closed
    form so that the solver never divides tiny derivatives.
    """

    case: DomainCase
    name: str
    y: np.ndarray
    d1: Callable
    d2: Callable
    d3: Callable
    ratio2: Callable
    ratio3: Callable
    _zeta: Optional[Callable] = None
    _zeta_grid: Optional[np.ndarray] = field(default=None, repr=False)
    _dist_over_d1: Optional[Callable] = None
    inverse: Optional[Callable] = None

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def y_range(self) -> tuple[float, float]:
        return float(self.y[0]), float(self.y[-1])

    def zeta(self, y=None):
        """x = zeta(y); cached values on the grid, cubic Hermite off it."""
        if y is None:
            y = self.y
        y = np.asarray(y, dtype=float)
        if self._zeta is not None:
            return self._zeta(y)
        if y.shape == self.y.shape and np.array_equal(y, self.y):
            return self._zeta_grid.copy()
        spline = CubicHermiteSpline(self.y, self._zeta_grid, self.d1(self.y))
        return spline(y)

    def distance(self, y=None):
        """d(zeta(y)), the distance of the image point to the complement."""
        if y is None:
            y = self.y
        y = np.asarray(y, dtype=float)
        if self._dist_over_d1 is not None:
            return self._dist_over_d1(y) * self.d1(y)
        return self.case.distance(self.zeta(y))

    def dist_over_d1(self, y=None):
        """d(zeta(y)) / zeta'(y); bounded above and below for boundary cases."""
        if y is None:
            y = self.y
        y = np.asarray(y, dtype=float)
        if self._dist_over_d1 is not None:
            return self._dist_over_d1(y)
        return self.case.distance(self.zeta(y)) / self.d1(y)

    def x_grid(self):
        return self.zeta(self.y)

    def hypothesis_a_bounds(self) -> tuple[float, float]:
        """sup |zeta''/zeta'| and sup |zeta'''/zeta'| over the grid."""
        return (float(np.max(np.abs(self.ratio2(self.y)))),
                float(np.max(np.abs(self.ratio3(self.y)))))

    def describe(self) -> dict:
        y0, y1 = self.y_range
        x = self.zeta(np.array([y0, y1]))
        return {"name": self.name, "y_range": [y0, y1], "dy": self.dy,
                "n": int(self.y.size), "x_range": [float(x[0]), float(x[1])]}


DEFAULT_DY = 1.0 / 64


def default_y_range(case: DomainCase) -> tuple[float, float]:
    if case.kind == "interval":
        return (-8.0, 8.0)
    # trust margins eat several units of y at each end over a unit of time
    if case.kind == "half_line":
        return (-16.0, 12.0)
    if case.quadratic:
        return (-12.0, 12.0)
    # zeta(y) ~ y**(2/(2-gamma)); reach |x| ~ 1e2 without an absurd grid
    p = 2.0 / (2.0 - case.gamma)
    y_max = min(40.0, max(8.0, (p * 100.0) ** (1.0 / p)))
    return (-y_max, y_max)


def uniform_grid(y_range, dy) -> np.ndarray:
    y_min, y_max = map(float, y_range)
    if not y_min < y_max:
        raise ValueError(f"empty y_range {y_range}")
    if not dy > 0:
        raise ValueError(f"dy must be positive, got {dy}")
    n = int(round((y_max - y_min) / dy))
    if n < 4:
        raise ValueError(f"y_range {y_range} holds fewer than 5 nodes at dy={dy}")
    return y_min + dy * np.arange(n + 1)


def _cumulative_quad(f, y, start, start_value):
    """Integrate f from `start` to every node of the sorted grid y."""
    vals = np.empty_like(y)
    i0 = int(np.searchsorted(y, start))
    acc = start_value
    prev = start
    for i in range(i0, y.size):
        acc += integrate.quad(f, prev, y[i], epsabs=0, epsrel=1e-13, limit=200)[0]
        vals[i] = acc
        prev = y[i]
    acc = start_value
    prev = start
    for i in range(i0 - 1, -1, -1):
        acc -= integrate.quad(f, y[i], prev, epsabs=0, epsrel=1e-13, limit=200)[0]
        vals[i] = acc
        prev = y[i]
    return vals


def interval_transform(case, y) -> Transform:
    """zeta(y) = L/2 (tanh y + 1) maps R onto (0, L)."""
    if case.kind != "interval":
        raise ValueError("interval_transform needs an interval case")
    L = case.L

    def d1(y):
        return 2.0 * L / (np.exp(y) + np.exp(-y)) ** 2

    def d2(y):
        return -2.0 * np.tanh(y) * d1(y)

    def d3(y):
        t = np.tanh(y)
        return (6.0 * t**2 - 2.0) * d1(y)

    return Transform(
        case=case, name="tanh", y=y, d1=d1, d2=d2, d3=d3,
        ratio2=lambda y: -2.0 * np.tanh(y),
        ratio3=lambda y: 6.0 * np.tanh(y) ** 2 - 2.0,
        _zeta=lambda y: L / (1.0 + np.exp(-2.0 * y)),
        _dist_over_d1=lambda y: 0.5 * (1.0 + np.exp(-2.0 * np.abs(y))),
        inverse=lambda x: 0.5 * np.log(x / (L - x)),
    )


def line_transform_quadratic(case, y) -> Transform:
    """zeta = sinh for quadratic growth on the whole line."""
    if case.kind != "line" or not case.quadratic:
        raise ValueError("sinh transform is for the whole line with gamma = 2")
    return Transform(
        case=case, name="sinh", y=y, d1=np.cosh, d2=np.sinh, d3=np.cosh,
        ratio2=np.tanh, ratio3=lambda y: np.ones_like(np.asarray(y, dtype=float)),
        _zeta=np.sinh, inverse=np.arcsinh,
    )


def line_transform_subquadratic(case, y) -> Transform:
    """zeta(y) = int_0^y <z>^(gamma/(2-gamma)) dz for gamma < 2."""
    if case.kind != "line" or case.quadratic:
        raise ValueError("power transform is for the whole line with gamma < 2")
    p = case.gamma / (2.0 - case.gamma)

    def d1(y):
        return japanese(y, p)

    def d2(y):
        return p * np.asarray(y) * japanese(y, p - 2.0)

    def d3(y):
        return japanese_d2(y, p)

    zeta_grid = _cumulative_quad(lambda z: (1.0 + z * z) ** (0.5 * p), y, 0.0, 0.0)
    return Transform(
        case=case, name=f"power(p={p:g})", y=y, d1=d1, d2=d2, d3=d3,
        ratio2=lambda y: p * np.asarray(y) / (1.0 + np.square(y)),
        ratio3=lambda y: p * ((p - 1.0) * np.square(y) + 1.0) / (1.0 + np.square(y)) ** 2,
        _zeta_grid=zeta_grid,
    )


def half_line_transform_quadratic(case, y) -> Transform:
    """zeta = exp for the half line with gamma = 2."""
    if case.kind != "half_line" or not case.quadratic:
        raise ValueError("exp transform is for the half line with gamma = 2")
    one = lambda y: np.ones_like(np.asarray(y, dtype=float))  # noqa: E731
    return Transform(
        case=case, name="exp", y=y, d1=np.exp, d2=np.exp, d3=np.exp,
        ratio2=one, ratio3=one, _zeta=np.exp, _dist_over_d1=one, inverse=np.log,
    )


def half_line_derivs(y, gamma):
    """zeta', zeta'', zeta''' of the blended half-line map (gamma < 2)."""
    q = 2.0 / (2.0 - gamma)
    y = np.asarray(y, dtype=float)
    psi, psi1, psi2 = cutoff(y), cutoff(y, 1), cutoff(y, 2)
    # e^y overflows far right, where psi and its derivatives vanish anyway
    E = np.exp(np.minimum(y, 1.0))
    B = japanese(y, q)
    B1 = q * y * japanese(y, q - 2.0)
    B2 = japanese_d2(y, q)
    z1 = psi * E + (1.0 - psi) * B
    z2 = psi1 * (E - B) + psi * E + (1.0 - psi) * B1
    z3 = psi2 * (E - B) + 2.0 * psi1 * (E - B1) + psi * E + (1.0 - psi) * B2
    return z1, z2, z3


def half_line_transform_subquadratic(case, y) -> Transform:
    """Blend of exp near the boundary and <y>^(2/(2-gamma)) at infinity."""
    if case.kind != "half_line" or case.quadratic:
        raise ValueError("blended transform is for the half line with gamma < 2")
    gamma = case.gamma

    def d1(y):
        return half_line_derivs(y, gamma)[0]

    def d2(y):
        return half_line_derivs(y, gamma)[1]

    def d3(y):
        return half_line_derivs(y, gamma)[2]

    def integrand(z):
        return float(half_line_derivs(np.array([z]), gamma)[0][0])

    # zeta = e^y exactly left of -1
    zeta_grid = np.where(y <= -1.0, np.exp(np.minimum(y, -1.0)), 0.0)
    right = y > -1.0
    if right.any():
        zeta_grid[right] = _cumulative_quad(integrand, y[right], -1.0, np.exp(-1.0))
    return Transform(
        case=case, name=f"blend(gamma={gamma:g})", y=y, d1=d1, d2=d2, d3=d3,
        ratio2=lambda y: d2(y) / d1(y), ratio3=lambda y: d3(y) / d1(y),
        _zeta_grid=zeta_grid,
    )


def half_line_zeta(y, gamma):
    """zeta(y) for the blended half-line map by adaptive quadrature."""
    if y <= -1.0:
        return float(np.exp(y))
    f = lambda z: float(half_line_derivs(np.array([z]), gamma)[0][0])  # noqa: E731
    return float(np.exp(-1.0) + integrate.quad(f, -1.0, y, epsabs=0, epsrel=1e-13, limit=200)[0])


def make_transform(case: DomainCase, y_range=None, dy: float = DEFAULT_DY) -> Transform:
    """Build the change of variables for `case` on a uniform grid."""
    if y_range is None:
        y_range = default_y_range(case)
    y = uniform_grid(y_range, dy)
    if case.kind == "interval":
        return interval_transform(case, y)
    if case.kind == "line":
        if case.quadratic:
            return line_transform_quadratic(case, y)
        return line_transform_subquadratic(case, y)
    if case.quadratic:
        return half_line_transform_quadratic(case, y)
    return half_line_transform_subquadratic(case, y)


# ---------------------------------------------------------------------------
# field conversion


@dataclass(frozen=True)
class FieldPair:
    """Snapshot of the transformed solution v on the uniform y-grid."""

    t: float
    y: np.ndarray
    v: np.ndarray


def clamp_nonnegative(v, scale=None):
    """Zero out negative entries; return the clamped array and the largest
    magnitude removed."""
    v = np.asarray(v, dtype=float)
    neg = v < 0
    if not neg.any():
        return v, 0.0
    mag = float(-v[neg].min())
    if scale is None:
        scale = float(np.max(np.abs(v)))
    if mag > CLAMP_RTOL * max(scale, 1e-300):
        log.debug("clamped negative v of magnitude %.3g (scale %.3g)", mag, scale)
    v = np.where(neg, 0.0, v)
    return v, mag


def u_to_v(u_values, transform: Transform, t: float = 0.0) -> FieldPair:
    """v = zeta'**-2 * u(zeta(y)) from u sampled at the image nodes."""
    u = np.asarray(u_values, dtype=float)
    if u.shape != transform.y.shape:
        raise ValueError(f"u has shape {u.shape}, grid has {transform.y.shape}")
    bad = np.flatnonzero(~(u >= 0))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"u must be nonnegative; node {i} holds {u[i]!r}")
    v = u / transform.d1(transform.y) ** 2
    v, _ = clamp_nonnegative(v)
    return FieldPair(t=t, y=transform.y, v=v)


def dy_derivatives(v, dy):
    """Second-order first and second y-derivatives; one-sided at the ends."""
    v = np.asarray(v, dtype=float)
    if v.size < 5:
        raise ValueError("need at least 5 nodes for the derivative stencils")
    d1 = np.empty_like(v)
    d2 = np.empty_like(v)
    d1[1:-1] = (v[2:] - v[:-2]) / (2 * dy)
    d1[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dy)
    d1[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dy)
    d2[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dy**2
    d2[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / dy**2
    d2[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / dy**2
    return d1, d2


def v_to_u_derivatives(field: FieldPair, transform: Transform):
    """Return (u, du/dx, d2u/dx2) at the image nodes zeta(y).

    Uses u = zeta'^2 v, du/dx = zeta' v_y + 2 zeta'' v and
    d2u/dx2 = v_yy + 3 (zeta''/zeta') v_y + 2 (zeta'''/zeta') v.
    """
    y = transform.y
    v = np.asarray(field.v, dtype=float)
    vy, vyy = dy_derivatives(v, transform.dy)
    z1 = transform.d1(y)
    u = z1**2 * v
    ux = z1 * vy + 2.0 * transform.d2(y) * v
    uxx = vyy + 3.0 * transform.ratio2(y) * vy + 2.0 * transform.ratio3(y) * v
    return u, ux, uxx
