"""Perturbed measures nu* = rho (1 + eps p) satisfying the quotient normalization.

A direction ``p`` is admissible when it is orthogonal under mu* to
``1, x, x^2`` and ``h``: then nu* has mass 1, mean 0, unit second moment
and ``int h d nu* = lambda_mu``.  The optional relaxed family instead
makes ``int h d nu* < lambda_mu``, which is only possible when ``h`` is not
a quadratic polynomial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDirection, InvalidParameter, InvariantViolation
from .measure import QuotientMeasure
from .spectral import SpectralResult, spectral_gap

CONSTRAINT_TOL = 1e-9
POSITIVITY_MARGIN = 0.95
IPP_SLACK = 1e-8


@dataclass(eq=False)
class PerturbationDirection:
    p_values: np.ndarray = field(repr=False)
    constraints_residual: tuple
    eps_max: float
    label: str
    eps_min: float = 0.0  # most negative admissible eps (a non-positive number)
    relaxed: bool = False


def _constraint_basis(m):
    return np.stack([np.ones_like(m.x), m.x, m.x ** 2, m.h])


def constraint_residuals(m: QuotientMeasure, p):
    return tuple(float(m.expect(p * row)) for row in _constraint_basis(m))


def _project(m, vals, basis):
    """mu*-orthogonal projection of ``vals`` off the span of ``basis`` rows."""
    w = np.sqrt(np.abs(m.grid.wts) * m.density)
    coef, *_ = np.linalg.lstsq((basis * w).T, vals * w, rcond=1e-13)
    return vals - coef @ basis


def _eps_range(p):
    lo = float(np.min(p))
    hi = float(np.max(p))
    eps_max = POSITIVITY_MARGIN / -lo if lo < 0 else math.inf
    eps_min = -POSITIVITY_MARGIN / hi if hi > 0 else -math.inf
    return eps_max, eps_min


def project_direction(m: QuotientMeasure, p_raw, *, label="custom", tol=CONSTRAINT_TOL):
    """Admissible direction from a raw perturbation (a function or grid values)."""
    raw = np.asarray(p_raw(m.x) if callable(p_raw) else p_raw, dtype=float) * np.ones_like(m.x)
    if not np.all(np.isfinite(raw)):
        raise InvalidParameter("raw direction must be finite on the grid")
    basis = _constraint_basis(m)
    p = _project(m, raw, basis)
    p = _project(m, p, basis)  # a second pass removes the residue of the first
    size = math.sqrt(m.expect(p * p))
    ref = math.sqrt(m.expect(raw * raw))
    if not size > 1e-8 * max(ref, 1e-300):
        raise DegenerateDirection(f"direction {label!r} lies in span(1, x, x^2, h)")
    p = p / size
    res = constraint_residuals(m, p)
    if max(abs(r) for r in res) > tol:
        raise InvariantViolation(f"direction {label!r} misses the constraints: {res}")
    eps_max, eps_min = _eps_range(p)
    return PerturbationDirection(p, res, eps_max, label, eps_min)


def relaxed_direction(m: QuotientMeasure, p_raw, *, label="relaxed", weight=0.5):
    """Direction with ``int h p d mu* < 0`` (strict inequality regime).

    ``p = p_perp - c h_perp`` where ``h_perp`` is ``h`` with its quadratic
    part removed; ``c`` makes the added component ``weight`` times the size
    of ``p_perp``.
    """
    base = project_direction(m, p_raw, label=label)
    quad = _constraint_basis(m)[:3]
    h_perp = _project(m, m.h, quad)
    size = math.sqrt(m.expect(h_perp * h_perp))
    if not size > 1e-8 * math.sqrt(m.expect(m.h ** 2)):
        raise DegenerateDirection("h is a quadratic polynomial: int h d nu* is pinned to lambda_mu")
    p = base.p_values - weight * h_perp / size
    res = constraint_residuals(m, p)
    if max(abs(r) for r in res[:3]) > CONSTRAINT_TOL or not res[3] < 0:
        raise InvariantViolation(f"relaxed direction {label!r} misses the constraints: {res}")
    eps_max, _ = _eps_range(p)
    # eps < 0 would flip the sign of int h p; only eps >= 0 is admissible
    return PerturbationDirection(p, res, eps_max, label, 0.0, relaxed=True)


# -- direction library -------------------------------------------------------


def _bump(center, width):
    def f(x):
        u = (np.asarray(x, dtype=float) - center) / width
        inside = np.abs(u) < 1
        out = np.zeros_like(u)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        return out

    return f


def _quantile(m, level):
    return float(np.interp(level, m.cdf, m.x))


def _envelope(m):
    scale = 2.0 * math.sqrt(max(m.m2 - m.m1 ** 2, 1e-12))
    return lambda x: np.exp(-0.5 * (np.asarray(x) / scale) ** 2)


def balance(m: QuotientMeasure, raw):
    """Subtract damped copies of ``1, x, x^2, h`` so that ``raw`` meets the constraints.

    The orthogonal projection of an unbounded polynomial part leaves
    ``-c x^2`` tails that force a tiny ``eps_max``; correcting with
    envelope-damped functions keeps the direction bounded, and the
    orthogonal projection applied afterwards only removes rounding.
    """
    vals = np.asarray(raw(m.x) if callable(raw) else raw, dtype=float) * np.ones_like(m.x)
    env = _envelope(m)(m.x)
    basis = _constraint_basis(m)
    correctors = basis * env
    gram = np.array([[m.expect(bk * cj) for cj in correctors] for bk in basis])
    rhs = np.array([m.expect(bk * vals) for bk in basis])
    coef, *_ = np.linalg.lstsq(gram, rhs, rcond=1e-12)
    return vals - coef @ correctors


def direction_library(m: QuotientMeasure):
    """Raw perturbations by name (grid values), adapted to the location and spread of ``m``."""
    env = _envelope(m)
    q10, q50, q70 = (_quantile(m, lv) for lv in (0.1, 0.5, 0.7))
    spread = _quantile(m, 0.9) - q10
    shapes = {
        "cubic": lambda x: np.asarray(x) ** 3 * env(x),
        "quintic": lambda x: np.asarray(x) ** 5 * env(x),
        "quartic": lambda x: np.asarray(x) ** 4 * env(x),
        "left_bump": _bump(q10, 0.25 * spread),
        "right_bump": _bump(0.5 * (q50 + q70) + 0.1 * spread, 0.25 * spread),
    }
    return {name: balance(m, fn) for name, fn in shapes.items()}


DIRECTION_NAMES = ("cubic", "quintic", "quartic", "left_bump", "right_bump")


def named_direction(m: QuotientMeasure, name):
    """Direction by library name; ``relaxed:<name>`` selects the relaxed family."""
    lib = direction_library(m)
    key = name.split(":", 1)[1] if name.startswith("relaxed:") else name
    if key not in lib:
        raise InvalidParameter(f"unknown direction {name!r}; choose from {sorted(lib)}")
    if name.startswith("relaxed:"):
        return relaxed_direction(m, lib[key], label=name)
    return project_direction(m, lib[key], label=name)


# -- perturbed measures ------------------------------------------------------


@dataclass(eq=False)
class PerturbedMeasure:
    base: QuotientMeasure
    direction: PerturbationDirection
    eps: float
    density: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    sf: np.ndarray = field(repr=False)
    c_p_sharp: float
    delta: float
    spectral: Optional[SpectralResult] = field(default=None, repr=False)
    mass: float = 1.0
    moments: tuple = ()

    @property
    def grid(self):
        return self.base.grid

    @property
    def x(self):
        return self.base.grid.x

    @property
    def h(self):
        return self.base.h

    @property
    def reliable(self):
        return self.base.reliable

    @property
    def spec(self):
        return self.base.spec

    def expect(self, vals):
        return self.grid.integrate(np.asarray(vals) * self.density)


def make_perturbed(m: QuotientMeasure, direction: PerturbationDirection, eps, *, levels=3):
    """``nu* = rho (1 + eps p)`` with its sharp Poincare constant and delta.

    ``delta = lambda_mu - lambda_1(nu*)`` uses the Richardson-extrapolated
    gap of nu* and the exact lambda_mu of the base model.
    """
    eps = float(eps)
    if not (direction.eps_min - 1e-15 <= eps <= direction.eps_max + 1e-15):
        raise InvalidParameter(
            f"eps={eps} outside the admissible range [{direction.eps_min}, {direction.eps_max}]")
    p = direction.p_values
    density = m.density * (1.0 + eps * p)
    if np.any(density < 0):
        raise InvariantViolation("perturbed density is negative")
    dp = m.density * p
    cdf = m.cdf + eps * m.grid.cumulative(dp)
    sf = m.sf + eps * m.grid.cumulative_right(dp)
    grid = m.grid
    mass = grid.integrate(density)
    moments = tuple(grid.integrate(density * f) for f in (m.x, m.x ** 2, m.h))
    if abs(mass - 1.0) > CONSTRAINT_TOL or abs(moments[0]) > CONSTRAINT_TOL or abs(moments[1] - 1.0) > CONSTRAINT_TOL:
        raise InvariantViolation(f"normalization lost: mass={mass}, moments={moments}")
    if moments[2] > m.spec.lambda_mu + CONSTRAINT_TOL:
        raise InvariantViolation(f"int h d nu* = {moments[2]} exceeds lambda_mu")

    nu = PerturbedMeasure(m, direction, eps, density, cdf, sf, math.nan, math.nan, None, mass, moments)
    res = spectral_gap(nu, m.spec, levels=levels)
    lam = res.lambda1_extrapolated
    nu.spectral = res
    nu.c_p_sharp = 1.0 / lam
    nu.delta = m.spec.lambda_mu - lam
    if nu.delta < -1e-9:
        raise InvariantViolation(f"delta = {nu.delta:.3g} < 0: C_P(nu*) fell below C_P(mu)")
    return nu


# -- approximate integration by parts ----------------------------------------


def ipp_test_functions():
    """Eight smooth test functions ``(name, psi, psi')``."""
    return [
        ("identity", lambda x: x, lambda x: np.ones_like(x)),
        ("square", lambda x: x ** 2, lambda x: 2 * x),
        ("cube", lambda x: x ** 3, lambda x: 3 * x ** 2),
        ("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
        ("sin", np.sin, np.cos),
        ("gauss_bump", lambda x: np.exp(-0.5 * x ** 2), lambda x: -x * np.exp(-0.5 * x ** 2)),
        ("arctan", np.arctan, lambda x: 1.0 / (1.0 + x ** 2)),
        ("smooth_abs", lambda x: np.sqrt(1.0 + x ** 2), lambda x: x / np.sqrt(1.0 + x ** 2)),
    ]


@dataclass
class IppReport:
    psi: str
    lhs_nu: float  # |int (h psi' - x psi / C_P(nu)) d nu*|
    rhs_nu: float  # sqrt(delta) (int h psi'^2 d nu*)^(1/2)
    lhs_mu: float  # |int S_mu(psi) d nu*|
    rhs_mu: float  # (sqrt(delta) + sqrt(C_P(nu)) delta) (int h psi'^2 d nu*)^(1/2)
    violations: int

    @property
    def ratios(self):
        r = lambda a, b: a / b if b > 0 else (0.0 if a <= IPP_SLACK else math.inf)
        return r(self.lhs_nu, self.rhs_nu), r(self.lhs_mu, self.rhs_mu)


def verify_approx_ipp(nu: PerturbedMeasure, psi, psi_prime, *, name="psi", slack=IPP_SLACK,
                      raise_on_violation=True):
    x, h = nu.x, nu.h
    vals = np.asarray(psi(x), dtype=float) * np.ones_like(x)
    dvals = np.asarray(psi_prime(x), dtype=float) * np.ones_like(x)
    delta = max(nu.delta, 0.0)
    cp_nu, cp_mu = nu.c_p_sharp, nu.base.c_p
    energy = math.sqrt(max(nu.expect(h * dvals ** 2), 0.0))
    lhs_nu = abs(nu.expect(h * dvals - x * vals / cp_nu))
    rhs_nu = math.sqrt(delta) * energy
    lhs_mu = abs(nu.expect(h * dvals - x * vals / cp_mu))
    rhs_mu = (math.sqrt(delta) + math.sqrt(cp_nu) * delta) * energy
    scale = 1.0 + energy
    bad = int(lhs_nu > rhs_nu + slack * scale) + int(lhs_mu > rhs_mu + slack * scale)
    report = IppReport(name, lhs_nu, rhs_nu, lhs_mu, rhs_mu, bad)
    if bad and raise_on_violation:
        raise InvariantViolation(f"approximate IPP violated for {name}", report)
    return report
