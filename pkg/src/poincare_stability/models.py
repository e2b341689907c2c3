"""Catalog of one-dimensional quotient diffusions.

A model is the triple (interval, h, lambda_mu): the generator on the
interval is ``h(x) phi'' - lambda_mu x phi'``.  Endpoint growth constants
are declared by each constructor and only *verified* by
:func:`check_assumptions`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special

from .errors import (
    AssumptionViolation,
    InvalidDomain,
    InvalidParameter,
    NotStrictlyConvex,
)
from .grid import IntervalMap

INF = math.inf


@dataclass(frozen=True)
class EndpointBehavior:
    """Declared growth of h near one endpoint.

    Finite end: ``c1 * dist**beta <= h <= c2 * dist**alpha`` for ``dist <= reach``.
    Infinite end: ``c1 * |t|**beta <= h <= c2 * |t|**alpha`` for ``|t| >= reach``.
    ``density_exponent`` is the power of ``dist`` in the invariant density at
    a finite end (negative means the density is unbounded there).
    """

    finite: bool
    c1: float
    c2: float
    alpha: float
    beta: float
    reach: float
    density_exponent: Optional[float] = None

    def pattern_ok(self):
        """Exponent conditions under which C_h is guaranteed finite."""
        if self.finite:
            return self.alpha >= 1.0 and self.beta <= 2.0
        return self.alpha <= 2.0 and self.beta >= 2.0 * self.alpha - 2.0


@dataclass(frozen=True)
class DiffusionSpec:
    name: str
    a: float
    b: float
    h: Callable = field(repr=False)
    lambda_mu: float
    left: Optional[EndpointBehavior] = None
    right: Optional[EndpointBehavior] = None
    closed_form_density: Optional[Callable] = field(default=None, repr=False)
    # h written in terms of the distance to a finite end; exact near that end
    h_left: Optional[Callable] = field(default=None, repr=False)
    h_right: Optional[Callable] = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lambda_mu > 0:
            raise InvalidParameter(f"lambda_mu must be positive, got {self.lambda_mu}")
        if not self.a < 0 < self.b:
            raise InvalidDomain(f"interval ({self.a}, {self.b}) must contain 0 in its interior")

    @property
    def c_p(self):
        return 1.0 / self.lambda_mu

    @property
    def interval(self):
        return (self.a, self.b)

    @property
    def endpoint_behavior(self):
        return (self.left, self.right)

    def h_at(self, x, da=None, db=None):
        """Evaluate h, switching to the distance form near finite ends."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.h(x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        if self.h_left is not None and da is not None:
            near = np.asarray(da) < np.asarray(db if db is not None else INF)
            if np.any(near):
                out = np.where(near, self.h_left(np.where(near, da, 1.0)), out)
        if self.h_right is not None and db is not None:
            near = np.asarray(db) <= np.asarray(da if da is not None else INF)
            if np.any(near):
                out = np.where(near, self.h_right(np.where(near, db, 1.0)), out)
        return out


def _positive(name, value):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and value > 0 and math.isfinite(value)):
        raise InvalidParameter(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def make_gaussian(c_p=1.0):
    """Ornstein-Uhlenbeck quotient: h constant equal to 1/c_p.

    The invariant density of ``h phi'' - (x/c_p) phi'`` with constant h is the
    standard normal whatever c_p is; see the decisions in the README.
    """
    c_p = _positive("c_p", c_p)
    lam = 1.0 / c_p
    ends = EndpointBehavior(False, lam, lam, 0.0, 0.0, 1.0)
    return DiffusionSpec(
        name=f"gaussian(c_p={c_p:g})",
        a=-INF,
        b=INF,
        h=lambda x: np.full_like(np.asarray(x, dtype=float), lam),
        lambda_mu=lam,
        left=ends,
        right=ends,
        closed_form_density=lambda x: np.exp(-0.5 * np.asarray(x) ** 2) / math.sqrt(2 * math.pi),
        params={"family": "gaussian", "c_p": c_p},
    )


def make_gamma(s, theta):
    """Laguerre process seen through its first normalized eigenfunction."""
    s = _positive("s", s)
    theta = _positive("theta", theta)
    rs = math.sqrt(s)
    log_norm = s * (0.5 * math.log(s) - 1.0) - special.gammaln(s)

    def density(x):
        x = np.asarray(x, dtype=float)
        d = np.maximum(rs - x, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(log_norm + (s - 1.0) * np.log(d) + rs * x)
        return np.where(x < rs, val, 0.0)

    return DiffusionSpec(
        name=f"gamma(s={s:g},theta={theta:g})",
        a=-INF,
        b=rs,
        h=lambda x: (s - rs * np.asarray(x, dtype=float)) / (theta * s),
        lambda_mu=1.0 / theta,
        left=EndpointBehavior(False, 1.0 / theta, 2.0 / (theta * rs), 1.0, 0.0, max(1.0, rs)),
        right=EndpointBehavior(True, 1.0 / (theta * rs), 1.0 / (theta * rs), 1.0, 1.0, rs, density_exponent=s - 1.0),
        closed_form_density=density,
        h_right=lambda d: np.asarray(d, dtype=float) / (theta * rs),
        params={"family": "gamma", "s": s, "theta": theta},
    )


def make_sphere(d):
    """Brownian motion on S^d projected on a rescaled coordinate."""
    if isinstance(d, bool) or int(d) != d or d < 1:
        raise InvalidParameter(f"sphere dimension must be an integer >= 1, got {d!r}")
    d = int(d)
    b = math.sqrt(d + 1)
    p = 0.5 * d - 1.0
    log_z = 0.5 * math.log(math.pi) + special.gammaln(p + 1) - special.gammaln(p + 1.5) + (2 * p + 1) * math.log(b)

    def density(t):
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) < b
        base = np.where(inside, (b - np.abs(t)) * (b + np.abs(t)), 1.0)
        return np.where(inside, np.exp(p * np.log(base) - log_z), 0.0)

    ends = EndpointBehavior(True, b, 2.0 * b, 1.0, 1.0, b, density_exponent=p)
    return DiffusionSpec(
        name=f"sphere(d={d})",
        a=-b,
        b=b,
        h=lambda t: (d + 1) - np.asarray(t, dtype=float) ** 2,
        lambda_mu=float(d),
        left=ends,
        right=ends,
        closed_form_density=density,
        h_left=lambda dist: np.asarray(dist, dtype=float) * (2.0 * b - np.asarray(dist, dtype=float)),
        h_right=lambda dist: np.asarray(dist, dtype=float) * (2.0 * b - np.asarray(dist, dtype=float)),
        params={"family": "sphere", "d": d},
    )


class _Inverse:
    """Vectorized inverse of a strictly increasing function on ``domain``."""

    def __init__(self, fn, dfn, domain, rtol=1e-12):
        self.fn, self.dfn, self.rtol = fn, dfn, rtol
        self.lo, self.hi = domain

    def _bracket(self, t):
        lo = np.full_like(t, -1.0 if math.isinf(self.lo) else self.lo)
        hi = np.full_like(t, 1.0 if math.isinf(self.hi) else self.hi)
        for _ in range(2100):
            bad_lo = self.fn(lo) > t
            bad_hi = self.fn(hi) < t
            if not (bad_lo.any() or bad_hi.any()):
                return lo, hi
            if bad_lo.any():
                if not math.isinf(self.lo):
                    raise InvalidDomain("target below the image of the domain")
                lo = np.where(bad_lo, 2.0 * lo, lo)
            if bad_hi.any():
                if not math.isinf(self.hi):
                    raise InvalidDomain("target above the image of the domain")
                hi = np.where(bad_hi, 2.0 * hi, hi)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                break
        raise InvalidDomain("could not bracket the inverse of phi'")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t).copy()
        lo, hi = self._bracket(t)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.fn(mid) < t
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= self.rtol * np.maximum(1.0, np.abs(mid))):
                break
        x = 0.5 * (lo + hi)
        for _ in range(4):  # Newton polish, kept inside the bracket
            step = (self.fn(x) - t) / self.dfn(x)
            x_new = x - step
            x = np.where((x_new > lo) & (x_new < hi), x_new, x)
        return x[0] if scalar else x


def make_log_concave(phi_prime, phi_second, domain=(-INF, INF), *, name="log-concave",
                     left=None, right=None, closed_form_density=None, params=None):
    """Moment-measure quotient of ``exp(-phi)``: h = phi'' o (phi')^-1, lambda_mu = 1.

    ``phi_prime`` and ``phi_second`` must accept numpy arrays.  The caller is
    responsible for the normalization ``int phi'^2 d mu = 1``.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not lo < hi:
        raise InvalidDomain(f"empty domain {domain}")
    probe_x = np.linspace(max(lo, -10.0), min(hi, 10.0), 2001)[1:-1]
    if np.any(phi_second(probe_x) <= 0):
        raise NotStrictlyConvex("phi'' is not positive on the domain")

    def image(end, sign):
        if math.isinf(end):
            big = sign * 1e6
            val = float(phi_prime(np.array([big]))[0])
            if abs(val) < 1e6 ** 0.5:
                raise InvalidDomain("phi' stays bounded on an infinite domain end")
            return sign * INF
        return float(phi_prime(np.array([end]))[0])

    a, b = image(lo, -1.0), image(hi, 1.0)
    inverse = _Inverse(phi_prime, phi_second, (lo, hi))

    def h(t):
        t = np.asarray(t, dtype=float)
        x = inverse(t)
        val = phi_second(x)
        if np.any(val <= 0):
            raise NotStrictlyConvex("phi'' <= 0 at an inverted point")
        return val

    return DiffusionSpec(
        name=name,
        a=a,
        b=b,
        h=h,
        lambda_mu=1.0,
        left=left,
        right=right,
        closed_form_density=closed_form_density,
        params=dict(params or {"family": "log_concave"}, phi_inverse=inverse),
    )


def make_log_concave_poly(coeffs, *, name=None, left=None, right=None):
    """Log-concave model from polynomial coefficients of phi (lowest degree first)."""
    poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    d1, d2 = poly.deriv(1), poly.deriv(2)
    return make_log_concave(
        lambda x: d1(np.asarray(x, dtype=float)),
        lambda x: d2(np.asarray(x, dtype=float)),
        name=name or f"log-concave(poly={list(coeffs)})",
        left=left,
        right=right,
        params={"family": "log_concave", "coeffs": [float(c) for c in coeffs]},
    )


def quartic_scale(weight):
    """Scale beta making phi = beta (x^2/2 + weight x^4/4) satisfy int phi'' d mu = 1."""

    def second_moment(beta):
        pot = lambda x: beta * (0.5 * x * x + 0.25 * weight * x ** 4)
        z = integrate.quad(lambda x: np.exp(-pot(x)), -np.inf, np.inf, epsabs=0, epsrel=1e-13)[0]
        m2 = integrate.quad(lambda x: x * x * np.exp(-pot(x)), -np.inf, np.inf, epsabs=0, epsrel=1e-13)[0]
        return beta * (1.0 + 3.0 * weight * m2 / z) - 1.0

    return optimize.brentq(second_moment, 1e-3, 1.0, xtol=1e-15, rtol=1e-15)


def make_quartic(weight=1.0):
    """Uniformly log-concave quadratic-plus-quartic potential, normalized.

    ``phi(x) = beta (x^2/2 + weight x^4/4)`` with ``beta`` chosen so that
    ``phi'`` has unit second moment; then ``kappa = beta``.
    """
    weight = _positive("weight", weight)
    beta = quartic_scale(weight)
    d1 = lambda x: beta * (x + weight * x ** 3)
    d2 = lambda x: beta * (1.0 + 3.0 * weight * x ** 2)
    pot = lambda x: beta * (0.5 * x * x + 0.25 * weight * x ** 4)
    z = integrate.quad(lambda x: np.exp(-pot(x)), -np.inf, np.inf, epsabs=0, epsrel=1e-13)[0]
    c2 = beta + 3.0 * (beta * weight) ** (1.0 / 3.0)
    ends = EndpointBehavior(False, beta, c2, 2.0 / 3.0, 0.0, 1.0)
    spec = make_log_concave(d1, d2, name=f"quartic(weight={weight:g})", left=ends, right=ends,
                            params={"family": "quartic", "weight": weight, "beta": beta})
    inverse = spec.params["phi_inverse"]

    def density(t):
        x = inverse(np.asarray(t, dtype=float))
        return np.exp(-pot(x)) / (z * d2(x))

    return replace(spec, closed_form_density=density)


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionReport:
    positivity_ok: bool
    ellipticity_kappa: Optional[float]
    growth_ok_at_a: bool
    growth_ok_at_b: bool
    details: list = field(default_factory=list)


def _sample_h(spec, s_lo, s_hi, n=4001):
    imap = IntervalMap.for_interval(spec.a, spec.b)
    s = np.linspace(s_lo, s_hi, n)
    x, da, db, _ = imap.evaluate(s)
    return x, da, db, spec.h_at(x, da, db)


def _growth_ok(spec, end, side, details):
    if end is None:
        details.append(f"{side}: no endpoint behavior declared")
        return False
    if not end.pattern_ok():
        details.append(f"{side}: declared exponents (alpha={end.alpha}, beta={end.beta}) outside the finiteness criteria")
        return False
    if end.finite:
        dist = np.geomspace(end.reach * 1e-12, end.reach, 600)
        if side == "a":
            x, da, db = spec.a + dist, dist, spec.b - (spec.a + dist)
        else:
            x, da, db = spec.b - dist, (spec.b - dist) - spec.a, dist
        pattern_lo, pattern_hi = dist ** end.beta, dist ** end.alpha
    else:
        mag = np.geomspace(end.reach, end.reach * 1e8, 600)
        x = -mag if side == "a" else mag
        da = db = np.full_like(x, INF)
        if side == "a" and math.isfinite(spec.b):
            db = spec.b - x
        if side == "b" and math.isfinite(spec.a):
            da = x - spec.a
        pattern_lo, pattern_hi = mag ** end.beta, mag ** end.alpha
    with np.errstate(over="ignore", invalid="ignore"):
        h = spec.h_at(x, da, db)
    tol = 1e-12
    ok_lo = np.all(end.c1 * pattern_lo <= h * (1 + tol))
    ok_hi = np.all(h <= end.c2 * pattern_hi * (1 + tol))
    if not ok_lo:
        details.append(f"{side}: lower growth bound c1*pattern <= h fails")
    if not ok_hi:
        details.append(f"{side}: upper growth bound h <= c2*pattern fails")
    return bool(ok_lo and ok_hi)


def check_assumptions(spec, grid=None, *, kappa_tol=1e-8):
    """Verify positivity of h, detect ellipticity and check declared growth."""
    from .measure import truncation_range  # local import: measure depends on this module

    details = []
    if grid is not None:
        h_grid = spec.h_at(grid.x, grid.da, grid.db)
    else:
        s_lo, s_hi = truncation_range(spec)
        h_grid = _sample_h(spec, s_lo, s_hi)[3]
    positivity_ok = bool(np.all(h_grid > 0))
    if not positivity_ok:
        details.append("h is not positive at every sampled interior point")

    mins = []
    for k in range(4):
        s_lo, s_hi = truncation_range(spec, v_threshold=10.0 ** (-12 * 2 ** k))
        mins.append(float(np.min(_sample_h(spec, s_lo, s_hi, n=8001)[3])))
    kappa = None
    stable = abs(mins[-1] - mins[-2]) < 1e-9 * max(1.0, abs(mins[-1]))
    if stable and mins[-1] > kappa_tol:
        kappa = float(min(mins[-1], np.min(h_grid)))
        details.append(f"ellipticity: inf h = {kappa:.12g} (stable over truncations)")
    else:
        details.append(f"ellipticity: running inf {mins} does not stabilize above {kappa_tol}")

    return AssumptionReport(
        positivity_ok=positivity_ok,
        ellipticity_kappa=kappa,
        growth_ok_at_a=_growth_ok(spec, spec.left, "a", details),
        growth_ok_at_b=_growth_ok(spec, spec.right, "b", details),
        details=details,
    )


def require_positive_h(spec, grid):
    h = spec.h_at(grid.x, grid.da, grid.db)
    if not np.all(h > 0):
        bad = grid.x[np.argmin(h)]
        raise AssumptionViolation(f"h vanishes or is negative at interior point x={bad:.6g} of {spec.name}")
    return h


def build_model(cfg):
    """Construct a model from a configuration mapping (e.g. a parsed TOML table)."""
    family = str(cfg.get("family", "")).lower()
    if family == "gaussian":
        return make_gaussian(cfg.get("c_p", 1.0))
    if family == "gamma":
        return make_gamma(cfg.get("s", 1.0), cfg.get("theta", 1.0))
    if family == "sphere":
        return make_sphere(cfg.get("d", 2))
    if family == "quartic":
        return make_quartic(cfg.get("weight", 1.0))
    if family in ("log_concave", "log-concave"):
        if "coeffs" not in cfg:
            raise InvalidParameter("log_concave model needs 'coeffs' (polynomial coefficients of phi)")
        return make_log_concave_poly(cfg["coeffs"])
    raise InvalidParameter(f"unknown model family {family!r}")


def catalog():
    """Models used by the acceptance suite, keyed by a short id."""
    models = {"gaussian": make_gaussian(1.0)}
    for s, theta in [(1, 1), (2, 0.5), (0.5, 2), (5, 1)]:
        models[f"gamma_{s:g}_{theta:g}"] = make_gamma(s, theta)
    for d in (1, 2, 3, 10):
        models[f"sphere_{d}"] = make_sphere(d)
    models["quartic"] = make_quartic(1.0)
    return models
