"""The invariant measure of a quotient diffusion and checks on its tails."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InvalidParameter, InvariantViolation, ModelNotNormalizable
from .grid import MAX_ABS_X, MIN_END_DISTANCE, Grid, IntervalMap, gauss_panel
from .models import DiffusionSpec, require_positive_h

DEFAULT_V_THRESHOLD = 1e-30
SPEC_V_THRESHOLD = 1e-12  # truncation must at least reach v < 1e-12 v(0)


def truncation_range(spec: DiffusionSpec, v_threshold=DEFAULT_V_THRESHOLD, step=1.0 / 16, m=8):
    """Range ``(s_lo, s_hi)`` of the map coordinate on which ``v >= v_threshold``.

    Marches outward from ``s = 0`` panel by panel, integrating
    ``-lambda_mu u / h(u)`` with Gauss-Legendre.  Finite ends stop early
    when the distance to the end underflows; then the remaining mass is
    below anything representable.
    """
    imap = IntervalMap.for_interval(spec.a, spec.b)
    t, w, *_ = gauss_panel(m)
    log_thr = math.log(v_threshold)
    out = []
    for sign in (-1.0, 1.0):
        log_v, s = 0.0, 0.0
        finite_end = math.isfinite(spec.a if sign < 0 else spec.b)
        while True:
            s_pts = s + sign * step * 0.5 * (1.0 + t)
            x, da, db, dxds = imap.evaluate(s_pts)
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                h = spec.h_at(x, da, db)
                incr = step * 0.5 * np.dot(w, spec.lambda_mu * x / h * dxds)
            end_x, end_da, end_db, _ = imap.evaluate(np.array([s + sign * step]))
            dist = float(end_da[0] if sign < 0 else end_db[0])
            if not np.isfinite(incr) or (finite_end and dist < MIN_END_DISTANCE) or abs(end_x[0]) > MAX_ABS_X:
                if log_v > math.log(SPEC_V_THRESHOLD) and not finite_end:
                    raise ModelNotNormalizable(
                        f"{spec.name}: v does not decay below {SPEC_V_THRESHOLD} before |x| = {MAX_ABS_X:g}"
                    )
                break
            s += sign * step
            log_v -= sign * incr
            if log_v < log_thr:
                break
        out.append(s)
    return out[0], out[1]


@dataclass(frozen=True, eq=False)
class QuotientMeasure:
    """Invariant probability measure of the quotient process on a grid.

    Arrays live on ``grid.x`` (nodes and Gauss points).  ``sf`` is ``1 - cdf``
    accumulated from the right end so that it keeps full relative accuracy
    in the right tail.
    """

    spec: DiffusionSpec
    grid: Grid
    h: np.ndarray = field(repr=False)
    log_v: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    Z: float = 0.0
    cdf: np.ndarray = field(default=None, repr=False)
    sf: np.ndarray = field(default=None, repr=False)
    m1: float = 0.0
    m2: float = 0.0
    mh: float = 0.0
    closed_form_deviation: Optional[float] = None
    v_threshold: float = DEFAULT_V_THRESHOLD

    @property
    def v(self):
        return np.exp(self.log_v)

    @property
    def reliable(self):
        """Mask of points far enough inside the truncation for tail checks.

        Beyond the truncation point the missing mass is of order ``v_threshold``;
        requiring ``v >= v_threshold**0.6`` keeps its relative effect on tail
        quantities below ``v_threshold**0.4`` (1e-12 at the default).  When the
        march stopped early at a finite end, the value of ``v`` reached there
        replaces the threshold.
        """
        floor = max(math.log(self.v_threshold), float(self.log_v[0]), float(self.log_v[-1]))
        return self.log_v >= 0.6 * floor

    @property
    def x(self):
        return self.grid.x

    @property
    def moments(self):
        return self.m1, self.m2, self.mh

    @property
    def c_p(self):
        return self.spec.c_p

    @property
    def q0(self):
        return float(self.cdf[self.grid.zero_index])

    def expect(self, vals):
        return self.grid.integrate(np.asarray(vals) * self.density)

    def cdf_at(self, x):
        """Monotone cubic interpolation of the CDF, clamped to [0, 1]."""
        interp = PchipInterpolator(self.grid.x, self.cdf, extrapolate=False)
        out = interp(np.asarray(x, dtype=float))
        out = np.where(np.asarray(x) < self.grid.x[0], 0.0, out)
        out = np.where(np.asarray(x) > self.grid.x[-1], 1.0, out)
        return np.clip(out, 0.0, 1.0)

    def density_sup(self):
        """Sup of the density, or ``inf`` when a finite end makes it unbounded."""
        for end in (self.spec.left, self.spec.right):
            if end is not None and end.finite and end.density_exponent is not None and end.density_exponent < 0:
                return math.inf
        return float(np.max(self.density))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "v", "density", "cdf"])
            for row in zip(self.grid.x, self.v, self.density, self.cdf):
                writer.writerow([f"{val:.17g}" for val in row])


def build_measure(spec: DiffusionSpec, n=4096, *, m=8, v_threshold=DEFAULT_V_THRESHOLD):
    """Compute v, density, Z, CDF and moments of the quotient measure.

    ``n`` is the number of panels (rounded up to a multiple of 4 so the grid
    nests under two coarsenings).
    """
    if n < 64:
        raise InvalidParameter(f"grid size must be >= 64, got {n}")
    n = int(4 * math.ceil(n / 4))
    s_lo, s_hi = truncation_range(spec, v_threshold)
    left_share = -s_lo / (s_hi - s_lo)
    k_left = min(max(4, 4 * round(n * left_share / 4)), n - 4)
    k_right = n - k_left
    step = max(-s_lo / k_left, s_hi / k_right)
    grid = Grid.build(IntervalMap.for_interval(spec.a, spec.b), step * np.arange(-k_left, k_right + 1), m)
    return measure_on_grid(spec, grid, v_threshold=v_threshold)


def measure_on_grid(spec, grid, *, v_threshold=DEFAULT_V_THRESHOLD):
    h = require_positive_h(spec, grid)
    drift = grid.cumulative(spec.lambda_mu * grid.x / h)
    log_v = -(drift - drift[grid.zero_index])
    unnorm = np.exp(log_v) / h
    Z = grid.integrate(unnorm)
    if not (np.isfinite(Z) and Z > 0):
        raise ModelNotNormalizable(f"{spec.name}: normalizer Z = {Z}")
    density = unnorm / Z
    cdf = grid.cumulative(density)
    sf = grid.cumulative_right(density)
    moments = [grid.integrate(density * f) for f in (grid.x, grid.x ** 2, h)]

    deviation = None
    if spec.closed_form_density is not None:
        resolved = np.minimum(grid.da, grid.db) > 1e-4  # x resolves the distance to the end
        ref = spec.closed_form_density(grid.x[resolved])
        ok = ref > 0
        deviation = float(np.max(np.abs(density[resolved][ok] - ref[ok]) / ref[ok]))

    return QuotientMeasure(
        spec=spec, grid=grid, h=h, log_v=log_v, density=density, Z=float(Z), cdf=cdf, sf=sf,
        m1=moments[0], m2=moments[1], mh=moments[2], closed_form_deviation=deviation,
        v_threshold=v_threshold,
    )


def compute_v(spec: DiffusionSpec, t, *, rtol=1e-13):
    """``v(t) = exp(-lambda_mu int_0^t u/h(u) du)`` by adaptive Gauss-Kronrod."""
    from scipy import integrate

    from .errors import NumericalFailure

    t = float(t)
    if not spec.a < t < spec.b:
        raise InvalidParameter(f"t={t} outside the open interval ({spec.a}, {spec.b})")
    if t == 0.0:
        return 1.0
    val, err, info = integrate.quad(
        lambda u: u / float(spec.h_at(np.array(u))), 0.0, t,
        epsabs=1e-14, epsrel=rtol, limit=500, full_output=True,
    )[:3]
    if err > 1e-9 * max(1.0, abs(val)):
        raise NumericalFailure("quadrature for v did not converge", value=val, error=err, info=info)
    return math.exp(-spec.lambda_mu * val)


# ---------------------------------------------------------------------------
# tail checks


@dataclass
class TailReport:
    checked: int
    violations: int
    worst_slack: float  # min over points of (bound - value) / bound
    worst_x: float


def verify_tail_bounds(m: QuotientMeasure, tol=1e-9, *, raise_on_violation=True):
    """Check ``q(t) <= min(q(0), -C_P/(Z t)) v(t)`` on t < 0 and the mirror on t > 0."""
    x, v, cp, Z = m.x, m.v, m.c_p, m.Z
    q0 = m.q0
    with np.errstate(divide="ignore"):
        left = x < 0
        right = x > 0
        bound = np.full_like(x, np.inf)
        bound[left] = np.minimum(q0, -cp / (Z * x[left])) * v[left]
        bound[right] = np.minimum(1.0 - q0, cp / (Z * x[right])) * v[right]
    value = np.where(left, m.cdf, m.sf)
    mask = (left | right) & m.reliable
    slack = (bound[mask] - value[mask]) / bound[mask]
    bad = slack < -tol
    i = int(np.argmin(slack))
    report = TailReport(int(mask.sum()), int(bad.sum()), float(slack[i]), float(x[mask][i]))
    if report.violations and raise_on_violation:
        raise InvariantViolation(f"tail bound violated at {report.violations} points", report)
    return report


@dataclass
class SideMinorization:
    side: str
    kind: str  # "infinite" | "finite" | "custom" | "undeclared"
    checked: int = 0
    violations: int = 0
    worst_ratio: float = math.inf  # min of value / lower bound
    boundedness_sup: float = 0.0  # sup |x (g - 1) / sqrt(h)| on the checked region
    region: tuple = (math.nan, math.nan)


@dataclass
class MinorizationReport:
    left: SideMinorization
    right: SideMinorization

    @property
    def violations(self):
        return self.left.violations + self.right.violations


def _g_declared(end, side, lam, a, b, x, dist):
    """g and g' from the declared growth constants (both endpoint cases)."""
    if end.finite:
        anchor = a if side == "a" else b
        k = 4.0 * end.c2 / (lam * anchor ** 2)
        g = 1.0 - k * dist ** end.alpha
        dg = (-1.0 if side == "a" else 1.0) * k * end.alpha * dist ** (end.alpha - 1.0)
        return g, dg
    k = end.c2 / lam
    mag = np.abs(x)
    g = 1.0 - k * mag ** (end.alpha - 2.0)
    dg = (1.0 if side == "a" else -1.0) * k * (end.alpha - 2.0) * mag ** (end.alpha - 3.0)
    return g, dg


def _check_side(m, side, g_custom, tol):
    spec, grid = m.spec, m.grid
    end = spec.left if side == "a" else spec.right
    x, h = grid.x, m.h
    dist = grid.da if side == "a" else grid.db
    on_side = (x < -1e-3) if side == "a" else (x > 1e-3)
    if g_custom is not None:
        g = g_custom(x)
        region = on_side & (np.abs(x) >= 1.0)
        kind = "custom"
    elif end is None:
        return SideMinorization(side, "undeclared")
    else:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            g, _ = _g_declared(end, side, spec.lambda_mu, spec.a, spec.b, x, dist)
        if end.finite:
            anchor = spec.a if side == "a" else spec.b
            near = (dist <= end.reach) & (np.abs(x) >= 0.5 * abs(anchor))
        else:
            near = np.abs(x) >= end.reach
        # where g < 0 the lower bound is negative and holds trivially
        region = on_side & near & (g >= 0)
        kind = "finite" if end.finite else "infinite"
    region &= m.reliable

    res = SideMinorization(side, kind, checked=int(region.sum()))
    if not res.checked:
        return res
    xr, gr, vr = x[region], g[region], m.v[region]
    if side == "a":
        lower = -(m.c_p / m.Z) * vr * gr / xr
        value = m.cdf[region]
    else:
        lower = (m.c_p / m.Z) * vr * gr / xr
        value = m.sf[region]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lower > 0, value / lower, np.inf)
    res.violations = int(np.sum(value < lower * (1.0 - tol)))
    res.worst_ratio = float(np.min(ratio))
    res.boundedness_sup = float(np.max(np.abs(xr * (gr - 1.0) / np.sqrt(h[region]))))
    res.region = (float(xr.min()), float(xr.max()))
    return res


def verify_g_minorization(m: QuotientMeasure, *, g_left=None, g_right=None, tol=1e-9,
                          raise_on_violation=True):
    """Check the tail minorizations ``q >= -(C_P/Z) v g1 / t`` near a and the mirror near b.

    Without explicit ``g_left``/``g_right`` the functions are built from the
    declared endpoint constants.  The inequality itself is checked on the
    declared endpoint neighbourhood, inside the reliable window and where
    ``g >= 0`` (elsewhere it is trivial).
    """
    report = MinorizationReport(_check_side(m, "a", g_left, tol), _check_side(m, "b", g_right, tol))
    if report.violations and raise_on_violation:
        raise InvariantViolation(f"g-minorization violated at {report.violations} points", report)
    return report


def exact_ipp_residual(m: QuotientMeasure, psi, psi_prime):
    """``int x psi dmu* - C_P int h psi' dmu*`` (zero for the invariant measure)."""
    x = m.x
    return m.expect(x * psi(x)) - m.c_p * m.expect(m.h * psi_prime(x))
