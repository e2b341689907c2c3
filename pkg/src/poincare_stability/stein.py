"""Explicit solutions of the quotient Stein equation and the constant C_h.

The Stein equation for the quotient measure reads

    h(x) psi'(x) - (x / C_P) psi(x) = f(x) - mu*(f).

With ``Z rho = v / h`` its canonical solution is ``psi = Z F_-(x) / v(x)``
where ``F_-(x) = int_a^x (f - mu*(f)) d mu*``, or equivalently
``psi = -Z F_+(x) / v(x)`` with the integral taken over ``(x, b)``.  Each
form accumulates the small tail on its own side of the origin, so the left
form is used for ``x <= 0`` and the right form for ``x > 0``.

For ``C_h`` two antiderivatives of the CDF matter,

    L(x) = int_a^x q(t) dt,    R(x) = int_x^b (1 - q(t)) dt,

and integration by parts gives ``L = x q + C_P v / Z`` and
``R = C_P v / Z - x (1 - q)``.  Using them,

    sqrt(Gamma*(a1)) = Z R / (C_P v sqrt(h)),
    sqrt(Gamma*(a2)) = Z L / (C_P v sqrt(h)),

so the objective whose sup is ``C_h`` is ``2 Z L R / (C_P v sqrt(h))``, a
product of positive quantities.  ``L`` and ``R`` are accumulated directly
from the CDF, which avoids the cancellation in ``1 - Z (1 - q) x / (C_P v)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameter, InvariantViolation, ModelNotNormalizable, NumericalFailure
from .grid import HALF_PI
from .measure import QuotientMeasure, build_measure

REPRESENTATION_TOL = 1e-7
RESIDUAL_TOL = 1e-6
BOUND_TOL = 1e-9
CH_GROWTH = 0.05  # relative growth per extension that counts as divergence


@dataclass(frozen=True)
class Target:
    """A test function with declared metadata.

    ``bounds`` is the declared range ``(lo, hi)`` of a bounded target, from
    which ``||f - mu*(f)||_inf = max(hi - mu*(f), mu*(f) - lo)``.
    ``lipschitz`` is the declared ``||f'||_inf``.
    """

    name: str
    f: Callable
    f_prime: Optional[Callable] = None
    bounds: Optional[tuple] = None
    lipschitz: Optional[float] = None

    @property
    def kind(self):
        return "bounded" if self.bounds is not None else "lipschitz"

    def sup_deviation(self, mu_f):
        if self.bounds is None:
            return math.inf
        lo, hi = self.bounds
        return max(hi - mu_f, mu_f - lo)


def _arr(fn):
    return lambda x: np.asarray(fn(np.asarray(x, dtype=float)), dtype=float) * np.ones_like(x, dtype=float)


def target_family():
    """Ten bounded and ten Lipschitz smooth targets used by the test suites."""
    th = np.tanh
    sech2 = lambda x: 4.0 * np.exp(-2 * np.abs(x)) / (1.0 + np.exp(-2 * np.abs(x))) ** 2
    bounded = [
        Target("constant", _arr(lambda x: 0.7 + 0 * x), _arr(lambda x: 0 * x), (0.7, 0.7), 0.0),
        Target("tanh", _arr(th), _arr(sech2), (-1.0, 1.0), 1.0),
        Target("soft_indicator_le_0", _arr(lambda x: 0.5 * (1 - th(4 * x))), _arr(lambda x: -2 * sech2(4 * x)),
               (0.0, 1.0), 2.0),
        Target("soft_indicator_le_-1", _arr(lambda x: 0.5 * (1 - th(4 * (x + 1)))),
               _arr(lambda x: -2 * sech2(4 * (x + 1))), (0.0, 1.0), 2.0),
        Target("soft_clamp", _arr(lambda x: x / np.sqrt(1 + x * x)), _arr(lambda x: (1 + x * x) ** -1.5),
               (-1.0, 1.0), 1.0),
        Target("sin", _arr(np.sin), _arr(np.cos), (-1.0, 1.0), 1.0),
        Target("cos_2x", _arr(lambda x: np.cos(2 * x)), _arr(lambda x: -2 * np.sin(2 * x)), (-1.0, 1.0), 2.0),
        Target("gauss_bump", _arr(lambda x: np.exp(-x * x)), _arr(lambda x: -2 * x * np.exp(-x * x)),
               (0.0, 1.0), math.sqrt(2.0) * math.exp(-0.5)),
        Target("cauchy_bump", _arr(lambda x: 1 / (1 + x * x)), _arr(lambda x: -2 * x / (1 + x * x) ** 2),
               (0.0, 1.0), 3.0 * math.sqrt(3.0) / 8.0),
        Target("arctan", _arr(np.arctan), _arr(lambda x: 1 / (1 + x * x)), (-HALF_PI, HALF_PI), 1.0),
    ]
    lipschitz = [
        Target("identity", _arr(lambda x: x), _arr(lambda x: 0 * x + 1.0), None, 1.0),
        Target("affine", _arr(lambda x: 2 * x + 1), _arr(lambda x: 0 * x + 2.0), None, 2.0),
        Target("smooth_abs", _arr(lambda x: np.sqrt(1 + x * x)), _arr(lambda x: x / np.sqrt(1 + x * x)), None, 1.0),
        Target("smooth_ramp", _arr(lambda x: 0.5 * np.logaddexp(2 * x, -2 * x)), _arr(lambda x: th(2 * x)), None, 1.0),
        Target("softplus", _arr(lambda x: np.logaddexp(0.0, x)), _arr(lambda x: 0.5 * (1 + th(0.5 * x))), None, 1.0),
        Target("x_plus_sin", _arr(lambda x: x + np.sin(x)), _arr(lambda x: 1 + np.cos(x)), None, 2.0),
        Target("arctan_plus_half_x", _arr(lambda x: np.arctan(x) + 0.5 * x), _arr(lambda x: 1 / (1 + x * x) + 0.5),
               None, 1.5),
        Target("cubic_over_quadratic", _arr(lambda x: x ** 3 / (1 + x * x)),
               _arr(lambda x: (3 * x * x + x ** 4) / (1 + x * x) ** 2), None, 1.125),
        Target("neg_half_x_plus_cos", _arr(lambda x: np.cos(x) - 0.5 * x), _arr(lambda x: -np.sin(x) - 0.5), None, 1.5),
        Target("half_softplus_2x", _arr(lambda x: 0.5 * np.logaddexp(0.0, 2 * x)),
               _arr(lambda x: 0.5 * (1 + th(x))), None, 1.0),
    ]
    return bounded + lipschitz



@dataclass(eq=False)
class SteinSolution:
    measure: QuotientMeasure
    target: Target
    mu_f: float
    psi: np.ndarray = field(repr=False)
    psi_prime: np.ndarray = field(repr=False)
    residual_max: float = 0.0
    representation_gap: float = 0.0
    h_psi_prime: Optional[np.ndarray] = field(default=None, repr=False)
    ipp_integral: float = 0.0  # int S_mu(psi) d mu*, with psi' differentiated on the grid

    @property
    def g(self):
        return self.target.f(self.measure.x) - self.mu_f

    @property
    def sup_deviation(self):
        return self.target.sup_deviation(self.mu_f)


def _residual(m, psi, g):
    """Stein residual with psi' from spectral differentiation (independent of the ODE)."""
    dpsi = m.grid.derivative(psi)
    res = m.h * dpsi - m.x * psi / m.c_p - g
    window = m.reliable
    scale = 1.0 + float(np.max(np.abs(g[window])))
    ipp = m.expect(np.where(window, m.h * dpsi - m.x * psi / m.c_p, g))
    return float(np.max(np.abs(res[window]))), scale, ipp


def solve_stein(m: QuotientMeasure, f, *, tol=REPRESENTATION_TOL, band=1.0):
    """Canonical solution of the Stein equation for the target ``f``.

    ``f`` is a :class:`Target` or a plain vectorized function (then treated
    as a Lipschitz target without metadata).
    """
    target = f if isinstance(f, Target) else Target(getattr(f, "__name__", "f"), f)
    x, v, Z = m.x, m.v, m.Z
    fx = np.asarray(target.f(x), dtype=float)
    mu_f = m.expect(fx)
    g = fx - mu_f
    gd = g * m.density
    left = Z * m.grid.cumulative(gd) / v
    right = -Z * m.grid.cumulative_right(gd) / v
    psi = np.where(x <= 0, left, right)

    # off its own side each form loses eps / v digits; stay where v is O(1)
    inner = (np.abs(x) <= band) & (v >= 1e-6)
    scale = 1.0 + float(np.max(np.abs(g[m.reliable])))
    gap = float(np.max(np.abs(left[inner] - right[inner]))) / scale
    if not gap <= tol:
        raise NumericalFailure("left and right Stein representations disagree", gap=gap, tol=tol)

    psi_prime = (g + x * psi / m.c_p) / m.h
    residual, _, ipp = _residual(m, psi, g)
    return SteinSolution(m, target, mu_f, psi, psi_prime, residual, gap, None, ipp)


def rewrite_lipschitz(m: QuotientMeasure, f_prime, *, f=None, name="f"):
    """Solution through the ``f'`` representation, with ``h psi'`` in product form.

    ``psi = -Z [(1-q) A + q B] / v`` and
    ``h psi' = Z (R A - L B) / (C_P v)`` with ``A = int_a^x f' q`` and
    ``B = int_x^b f' (1-q)``.  Without ``f`` the target is reconstructed as
    ``int_0^x f'``.
    """
    if isinstance(f_prime, Target):
        target = f_prime
        f_prime = target.f_prime
    else:
        target = None
    x, v, Z, cp = m.x, m.v, m.Z, m.c_p
    fp = np.asarray(f_prime(x), dtype=float) * np.ones_like(x)
    A = m.grid.cumulative(fp * m.cdf)
    B = m.grid.cumulative_right(fp * m.sf)
    L, R = cdf_integrals(m)
    psi = -Z * ((m.sf * A) + (m.cdf * B)) / v
    h_psi_prime = Z * (R * A - L * B) / (cp * v)

    if target is None:
        if f is None:
            rec = m.grid.cumulative(fp)
            rec = rec - rec[m.grid.zero_index]
            f = lambda t, _x=x, _r=rec: np.interp(t, _x, _r)
        target = Target(name, f, f_prime)
    fx = np.asarray(target.f(x), dtype=float)
    mu_f = m.expect(fx)
    g = fx - mu_f
    residual, _, ipp = _residual(m, psi, g)
    return SteinSolution(m, target, mu_f, psi, h_psi_prime / m.h, residual, 0.0, h_psi_prime, ipp)


def representation_gap(a: SteinSolution, b: SteinSolution):
    """Max difference of two solutions on the reliable window, scaled like the residual."""
    m = a.measure
    w = m.reliable
    scale = 1.0 + float(np.max(np.abs(a.g[w])))
    return float(np.max(np.abs(a.psi[w] - b.psi[w]))) / scale


# -- bound checks -------------------------------------------------------------


@dataclass
class BoundReport:
    name: str
    checked: int
    violations: int
    lhs: float
    rhs: float

    @property
    def ratio(self):
        if self.rhs == 0:
            return 0.0 if self.lhs <= 0 else math.inf
        return self.lhs / self.rhs

    @property
    def slack(self):
        return self.rhs - self.lhs


def _bound(name, values, rhs, tol=BOUND_TOL):
    values = np.abs(values)
    limit = rhs * (1.0 + tol) + tol * 1e-6
    return BoundReport(name, int(values.size), int(np.sum(values > limit)), float(np.max(values)), float(rhs))


def _raise_if(reports, raise_on_violation):
    bad = [r for r in reports if r.violations]
    if bad and raise_on_violation:
        raise InvariantViolation("; ".join(f"{r.name}: {r.violations} violations" for r in bad), reports)
    return reports


def _require_bounded(sol):
    if sol.target.bounds is None:
        raise InvalidParameter(f"target {sol.target.name!r} declares no bounds")
    return sol.sup_deviation


def check_sup_bounds(sol: SteinSolution, *, raise_on_violation=True):
    """``||psi|| <= Z max(q0, 1-q0) ||g||`` and ``||x psi|| <= C_P ||g||`` at every point."""
    m = sol.measure
    dev = _require_bounded(sol)
    q0 = m.q0
    reports = [
        _bound("sup_psi", sol.psi, m.Z * max(q0, 1.0 - q0) * dev),
        _bound("sup_x_psi", m.x * sol.psi, m.c_p * dev),
    ]
    return _raise_if(reports, raise_on_violation)


def check_elliptic_bounds(sol: SteinSolution, kappa, *, raise_on_violation=True):
    """``||psi'|| <= (2/kappa) ||g||`` and ``||h psi'^2|| <= (4/kappa) ||g||^2``."""
    if not (kappa and kappa > 0):
        raise InvalidParameter(f"kappa must be positive, got {kappa}")
    dev = _require_bounded(sol)
    m = sol.measure
    reports = [
        _bound("sup_psi_prime", sol.psi_prime, 2.0 / kappa * dev),
        _bound("sup_h_psi_prime_sq", m.h * sol.psi_prime ** 2, 4.0 / kappa * dev ** 2),
    ]
    return _raise_if(reports, raise_on_violation)


def check_lipschitz_bound(sol: SteinSolution, ch: "ChBreakdown", *, raise_on_violation=True):
    """``||sqrt(h) psi'|| <= C_h ||f'||`` on the reliable window."""
    target = sol.target
    if target.lipschitz is None:
        raise InvalidParameter(f"target {target.name!r} declares no Lipschitz constant")
    m = sol.measure
    hpp = sol.h_psi_prime
    if hpp is None:
        if target.f_prime is None:
            hpp = m.h * sol.psi_prime
        else:
            hpp = rewrite_lipschitz(m, target).h_psi_prime
    w = m.reliable
    reports = [_bound("sup_sqrt_h_psi_prime", hpp[w] / np.sqrt(m.h[w]), ch.C_h * target.lipschitz)]
    return _raise_if(reports, raise_on_violation)


# -- C_h ---------------------------------------------------------------------


def cdf_integrals(m: QuotientMeasure):
    """``L = int_a^x q`` and ``R = int_x^b (1-q)`` on the grid."""
    return m.grid.cumulative(m.cdf), m.grid.cumulative_right(m.sf)


@dataclass(eq=False)
class ChBreakdown:
    x: np.ndarray = field(repr=False)
    a1_values: np.ndarray = field(repr=False)
    a2_values: np.ndarray = field(repr=False)
    gamma_a1: np.ndarray = field(repr=False)
    gamma_a2: np.ndarray = field(repr=False)
    left_integrals: np.ndarray = field(repr=False)
    right_integrals: np.ndarray = field(repr=False)
    objective: np.ndarray = field(repr=False)
    C_h: float
    argmax: float
    finite: Optional[bool] = None
    extension_sups: list = field(default_factory=list)
    growth_pattern_ok: Optional[bool] = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "a1", "a2", "sqrt_gamma_a1", "sqrt_gamma_a2", "objective"])
            rows = zip(self.x, self.a1_values, self.a2_values, np.sqrt(self.gamma_a1),
                       np.sqrt(self.gamma_a2), self.objective)
            for row in rows:
                writer.writerow([f"{val:.17g}" for val in row])


def _ch_on(m):
    w = m.reliable
    L, R = cdf_integrals(m)
    x, v, h, Z, cp = m.x[w], m.v[w], m.h[w], m.Z, m.c_p
    L, R = L[w], R[w]
    s1 = Z * R / (cp * v * np.sqrt(h))
    s2 = Z * L / (cp * v * np.sqrt(h))
    objective = s1 * L + s2 * R
    k = int(np.argmax(objective))
    with np.errstate(over="ignore"):  # Gamma*(a1) overflows far out once v is tiny
        g1, g2 = s1 ** 2, s2 ** 2
    return ChBreakdown(
        x=x, a1_values=Z * m.sf[w] / v, a2_values=Z * m.cdf[w] / v, gamma_a1=g1, gamma_a2=g2,
        left_integrals=L, right_integrals=R, objective=objective, C_h=float(objective[k]), argmax=float(x[k]),
    )


def sup_diverges(sups, growth=CH_GROWTH):
    """True when every successive sup grows by more than ``growth`` (relative)."""
    return len(sups) >= 2 and all(b > a * (1.0 + growth) for a, b in zip(sups, sups[1:]))


def compute_ch(m: QuotientMeasure, *, check_finite=True, extensions=3):
    """Sup of the C_h objective, with an operational finiteness test.

    The truncation is pushed outward ``extensions`` times (each squares the
    ``v`` threshold).  If the sup grows by more than 5% at every step, the
    constant is reported as not finite and ``C_h`` is set to ``inf``.  When
    no extension can be built (the tail reaches the representable range)
    ``finite`` stays ``None``.
    """
    out = _ch_on(m)
    end_ok = [e.pattern_ok() for e in (m.spec.left, m.spec.right) if e is not None]
    out.growth_pattern_ok = all(end_ok) if len(end_ok) == 2 else None
    if not check_finite:
        return out
    sups = [out.C_h]
    thr = m.v_threshold
    for _ in range(extensions):
        thr = max(thr * thr, 1e-300)
        try:
            wider = build_measure(m.spec, m.grid.n_panels, m=m.grid.m, v_threshold=thr)
        except ModelNotNormalizable:
            break
        sups.append(_ch_on(wider).C_h)
    out.extension_sups = sups
    if len(sups) < 2:
        return out
    out.finite = not sup_diverges(sups)
    if not out.finite:
        out.C_h = math.inf
    return out
