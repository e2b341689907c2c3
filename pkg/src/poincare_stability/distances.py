"""W1, total variation and Kolmogorov distances between measures on an interval.

Inputs are either measure-like objects (with ``grid``, ``density`` and
``cdf`` attributes) or plain arrays together with a ``grid``.  The grid may
be a :class:`Grid` (Gauss quadrature) or a sorted array of points
(trapezoid rule).  Two measures on different grids are compared on the
merged point set, with monotone interpolation of the CDFs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InvalidCDF, InvalidDensity, InvariantViolation, InvalidParameter
from .grid import Grid

CDF_MONOTONE_TOL = 1e-12
CDF_LIMIT_TOL = 1e-6
MASS_TOL = 1e-6
DOMINATION_TOL = 1e-10
DUAL_SLACK = 1e-8


@dataclass(frozen=True)
class DistanceTriple:
    w1: float
    tv: float
    kolmogorov: float

    def __post_init__(self):
        if self.kolmogorov > self.tv + DOMINATION_TOL:
            raise InvariantViolation(f"kolmogorov {self.kolmogorov:.3g} exceeds tv {self.tv:.3g}", self)


class _Axis:
    """Integration rule on a set of sample points."""

    def __init__(self, grid):
        if isinstance(grid, Grid):
            self.grid = grid
            self.x = grid.x
        else:
            self.grid = None
            self.x = np.asarray(grid, dtype=float)
            if self.x.ndim != 1 or np.any(np.diff(self.x) <= 0):
                raise InvalidParameter("grid points must be strictly increasing")

    def integrate(self, vals):
        if self.grid is not None:
            return self.grid.integrate(vals)
        return float(np.trapezoid(vals, self.x))

    def cell_integrals(self, vals):
        """Trapezoid estimates of the integral over each gap between samples."""
        vals = np.asarray(vals, dtype=float)
        return 0.5 * (vals[1:] + vals[:-1]) * np.diff(self.x)


def _validate_cdf(q, name):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or not np.all(np.isfinite(q)):
        raise InvalidCDF(f"{name}: cdf must be a finite 1-d sequence")
    if np.any(np.diff(q) < -CDF_MONOTONE_TOL):
        k = int(np.argmin(np.diff(q)))
        raise InvalidCDF(f"{name}: cdf decreases at index {k}")
    if q[0] > CDF_LIMIT_TOL or q[-1] < 1.0 - CDF_LIMIT_TOL:
        raise InvalidCDF(f"{name}: cdf limits are {q[0]:.3g} and {q[-1]:.3g}, expected 0 and 1")
    return q


def _grid_of(obj):
    return getattr(obj, "grid", None)


def _same_points(g1, g2):
    if g1 is g2:
        return True
    x1 = g1.x if isinstance(g1, Grid) else np.asarray(g1)
    x2 = g2.x if isinstance(g2, Grid) else np.asarray(g2)
    return x1.shape == x2.shape and np.array_equal(x1, x2)


def _on_common(a, b, grid, attr):
    """Return ``(axis, va, vb)`` for attribute ``attr`` of two inputs on shared points."""
    ga, gb = _grid_of(a), _grid_of(b)
    va = getattr(a, attr) if ga is not None else a
    vb = getattr(b, attr) if gb is not None else b
    ga = ga if ga is not None else grid
    gb = gb if gb is not None else grid
    if ga is None or gb is None:
        raise InvalidParameter("array inputs need a grid")
    va = np.asarray(va, dtype=float)
    vb = np.asarray(vb, dtype=float)
    if _same_points(ga, gb):
        axis = _Axis(ga)
        if len(va) != len(axis.x) or len(vb) != len(axis.x):
            raise InvalidParameter("values and grid differ in length")
        return axis, va, vb
    xa = ga.x if isinstance(ga, Grid) else np.asarray(ga, dtype=float)
    xb = gb.x if isinstance(gb, Grid) else np.asarray(gb, dtype=float)
    merged = np.union1d(xa, xb)
    axis = _Axis(merged)
    return axis, _resample(xa, va, merged, attr), _resample(xb, vb, merged, attr)


def _resample(x, vals, target, attr):
    if attr == "cdf":
        out = PchipInterpolator(x, vals, extrapolate=False)(target)
        out = np.where(target < x[0], 0.0, out)
        return np.where(target > x[-1], 1.0, out)
    return np.interp(target, x, vals, left=0.0, right=0.0)


def wasserstein1(q1, q2, grid=None):
    """``W1 = int |F1 - F2|`` (exact in one dimension)."""
    axis, f1, f2 = _on_common(q1, q2, grid, "cdf")
    _validate_cdf(f1, "q1")
    _validate_cdf(f2, "q2")
    return axis.integrate(np.abs(f1 - f2))


def total_variation(d1, d2, grid=None):
    """``d_TV = (1/2) int |rho1 - rho2|``."""
    axis, r1, r2 = _on_common(d1, d2, grid, "density")
    for name, r in (("d1", r1), ("d2", r2)):
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise InvalidDensity(f"{name}: density must be finite and nonnegative")
        mass = axis.integrate(r)
        if abs(mass - 1.0) > MASS_TOL:
            raise InvalidDensity(f"{name}: mass {mass:.12g} differs from 1")
    return 0.5 * axis.integrate(np.abs(r1 - r2))


def kolmogorov(q1, q2, grid=None, *, d1=None, d2=None):
    """Sup of ``|F1 - F2|`` over the samples plus an interpolation-error term.

    With densities (from measure inputs or ``d1``/``d2``) the term is
    rigorous: between neighbouring samples the gap ``D`` moves by at most
    ``w = int |rho1 - rho2|`` over the cell, so ``|D| <= (|D(l)| + |D(r)| + w)/2``.
    From CDF values alone it is the linear-interpolation estimate
    ``dx * |jump of D'| / 8`` at the cell's ends, which vanishes when ``D``
    is piecewise linear on the samples.
    """
    axis, f1, f2 = _on_common(q1, q2, grid, "cdf")
    _validate_cdf(f1, "q1")
    _validate_cdf(f2, "q2")
    diff = f1 - f2
    gap = np.abs(diff)
    if len(gap) < 2:
        return float(np.max(gap))
    src1 = d1 if d1 is not None else (q1 if hasattr(q1, "density") else None)
    src2 = d2 if d2 is not None else (q2 if hasattr(q2, "density") else None)
    ends = np.maximum(gap[1:], gap[:-1])
    if src1 is not None and src2 is not None:
        _, r1, r2 = _on_common(src1, src2, grid if grid is not None else axis.x, "density")
        wiggle = axis.cell_integrals(np.abs(r1 - r2))
        cells = np.maximum(0.5 * (gap[1:] + gap[:-1] + wiggle), ends)
    else:
        dx = np.diff(axis.x)
        slope = np.divide(np.diff(diff), dx, out=np.zeros_like(dx), where=dx > 0)
        jump = np.abs(np.diff(slope))
        kink = np.zeros_like(dx)
        kink[1:] = np.maximum(kink[1:], jump)
        kink[:-1] = np.maximum(kink[:-1], jump)
        cells = ends + 0.125 * dx * kink
    return float(np.max(cells))


def distance_triple(a, b, grid=None):
    """All three distances between two measures; enforces ``d_K <= d_TV``."""
    w1 = wasserstein1(a, b, grid)
    tv = total_variation(a, b, grid)
    k = kolmogorov(a, b, grid)
    # d_K <= d_TV holds exactly; the cell bound may overshoot by quadrature noise
    return DistanceTriple(w1, tv, min(k, tv))


@dataclass
class KwReport:
    kolmogorov: float
    w1: float
    density_sup: float
    bound: float

    @property
    def ratio(self):
        if self.bound > 0:
            return self.kolmogorov / self.bound
        return 0.0 if self.kolmogorov <= DOMINATION_TOL else math.inf


def check_kw_comparison(q1, q2, density_sup, grid=None, *, tol=DOMINATION_TOL, kolmogorov_value=None,
                        w1_value=None):
    """Verify ``d_K <= 2 sqrt(C W1)`` where ``C`` bounds the first density."""
    if not density_sup > 0:
        raise InvalidParameter("density_sup must be positive")
    k = kolmogorov(q1, q2, grid) if kolmogorov_value is None else kolmogorov_value
    w1 = wasserstein1(q1, q2, grid) if w1_value is None else w1_value
    bound = 2.0 * math.sqrt(density_sup * w1)
    report = KwReport(k, w1, density_sup, bound)
    if k > bound + tol:
        raise InvariantViolation(f"d_K = {k:.6g} exceeds 2 sqrt(C W1) = {bound:.6g}", report)
    return report


def random_lipschitz(rng, breakpoints, knots=12):
    """Random piecewise-linear 1-Lipschitz function with kinks drawn from ``breakpoints``."""
    pool = np.unique(np.asarray(breakpoints, dtype=float))
    pts = np.sort(rng.choice(pool, size=min(knots, len(pool)), replace=False))
    slopes = rng.uniform(-1.0, 1.0, len(pts) + 1)
    vals = np.concatenate(([0.0], np.cumsum(slopes[1:-1] * np.diff(pts))))

    def f(x):
        x = np.asarray(x, dtype=float)
        inner = np.interp(x, pts, vals)
        below = vals[0] + slopes[0] * np.minimum(x - pts[0], 0.0)
        above = vals[-1] + slopes[-1] * np.maximum(x - pts[-1], 0.0)
        return np.where(x < pts[0], below, np.where(x > pts[-1], above, inner))

    return f


def dual_w1_check(a, b, grid=None, *, n_functions=20, seed=20240607, slack=DUAL_SLACK):
    """Kantorovich dual check: ``int f d(a - b) <= W1`` for random 1-Lipschitz ``f``.

    Returns ``(best dual value, W1)``.  Kinks sit on panel ends of a Gauss
    grid so that every piece is integrated exactly.
    """
    axis, r1, r2 = _on_common(a, b, grid, "density")
    w1 = wasserstein1(a, b, grid)
    rng = np.random.default_rng(seed)
    support = np.abs(r1 - r2) > 0
    if not np.any(support):
        return 0.0, w1
    lo, hi = axis.x[support][0], axis.x[support][-1]
    pool = axis.grid.nodes if axis.grid is not None else axis.x
    pool = pool[(pool >= lo) & (pool <= hi)]
    if len(pool) < 2:
        pool = np.array([lo, hi])
    best = 0.0
    for _ in range(n_functions):
        fx = random_lipschitz(rng, pool)(axis.x)
        best = max(best, abs(axis.integrate(fx * (r1 - r2))))
    if best > w1 + slack:
        raise InvariantViolation(f"dual value {best:.6g} exceeds W1 = {w1:.6g}")
    return best, w1
