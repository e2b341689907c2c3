"""Sharp Poincare constant of a 1-D measure from a finite element pencil.

The variational problem is discretized with continuous piecewise-linear
elements in the map coordinate ``s`` of the measure grid.  With
``nu = rho dx`` and ``x = X(s)``,

    stiffness  K_ij = int h rho (dphi_i/ds)(dphi_j/ds) / X'(s) ds,
    mass       M_ij = int rho X'(s) phi_i phi_j ds,

both integrated with the grid's Gauss points.  The pencil is tridiagonal.
Constants span the kernel of ``K``; the gap is the second smallest
generalized eigenvalue, located by Sturm counts of ``K - sigma M`` and
polished by inverse iteration.

Coarser levels reuse the same quadrature with hats on every 2nd or 4th
node, so the trial spaces are nested and the estimates decrease
monotonically under refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConstantTestFunction, DegenerateMeasure, NoGapDetected
from .grid import gauss_panel

GAP_FLOOR = 1e-12


@dataclass(eq=False)
class SpectralResult:
    lambda1: float
    eigenfunction: np.ndarray = field(repr=False)  # on grid.x, mean 0 and variance 1
    rayleigh_residual: float
    grid_convergence: list
    panels: list
    lambda1_extrapolated: float
    precision: float  # change over the last doubling
    correlation_with_identity: float

    @property
    def c_p_sharp(self):
        lam = self.lambda1_extrapolated
        return 1.0 / (lam if math.isfinite(lam) else self.lambda1)


def _unpack(density, spec, grid, h):
    window = None
    if hasattr(density, "grid") and hasattr(density, "density"):
        grid = grid or density.grid
        if h is None and getattr(density, "h", None) is not None:
            h = density.h
        window = getattr(density, "reliable", None)
        density = density.density
    if grid is None:
        raise TypeError("a grid is required when the density is given as an array")
    rho = np.asarray(density, dtype=float)
    if rho.shape != grid.x.shape:
        raise ValueError("density must be sampled on grid.x")
    if h is None:
        h = spec.h_at(grid.x, grid.da, grid.db)
    return rho, grid, np.asarray(h, dtype=float), window


STIFF_LIMIT = 1e12  # largest scaled stiffness kept; stiffer end regions are lumped


def _window_grid(grid, rho, h, window, multiple):
    """Node range used by the pencil, plus the mass lumped onto its two end nodes.

    Nodes outside ``window`` (tail truncation) or where ``h / (X' ds)^2``
    exceeds ``STIFF_LIMIT`` are dropped.  Near a finite end the elements
    shrink doubly exponentially in ``x``, so any H^1 function is constant
    there to high accuracy; lumping their mass onto the boundary node
    keeps the space conforming up to that rigidity.
    """
    nodes = grid.node_index
    ok = np.ones(grid.n_nodes, dtype=bool) if window is None else window[nodes].copy()
    ds = np.diff(grid.s_nodes)
    ds = np.concatenate((ds[:1], np.minimum(ds[1:], ds[:-1]), ds[-1:]))
    with np.errstate(divide="ignore", over="ignore"):
        stiff = h[nodes] / (grid.dxds[nodes] * ds) ** 2
    ok &= stiff <= STIFF_LIMIT
    inside = np.flatnonzero(ok)
    lo, hi = int(inside[0]), int(inside[-1])
    zero = int(np.flatnonzero(grid.s_nodes == 0.0)[0]) if np.any(grid.s_nodes == 0.0) else lo
    lo = zero - multiple * ((zero - lo) // multiple)
    hi = zero + multiple * ((hi - zero) // multiple)
    cum = grid.cumulative(rho)
    lumped = (float(cum[nodes[lo]]), float(cum[-1] - cum[nodes[hi]]))
    if lo == 0 and hi == grid.n_panels:
        return grid, rho, h, lumped
    sub = type(grid).build(grid.imap, grid.s_nodes[lo:hi + 1], grid.m)
    k0, k1 = lo * (grid.m + 1), hi * (grid.m + 1) + 1
    return sub, rho[k0:k1], h[k0:k1], lumped


class _Pencil:
    """Tridiagonal stiffness/mass pair for hats on every ``stride``-th node."""

    def __init__(self, grid, rho, h, stride, lumped=(0.0, 0.0)):
        P, m = grid.n_panels, grid.m
        if P % stride:
            raise ValueError("stride must divide the number of panels")
        t, w, *_ = gauss_panel(m)
        s_nodes = grid.s_nodes
        half = 0.5 * np.diff(s_nodes)
        quad = lambda a: np.asarray(a)[:-1].reshape(P, m + 1)[:, 1:]
        wq = half[:, None] * w[None, :]
        xs = quad(grid.dxds)
        mass_w = wq * quad(rho) * xs
        with np.errstate(divide="ignore", invalid="ignore"):
            stiff_w = np.where(xs > 0, wq * quad(h) * quad(rho) / xs, 0.0)

        coarse = s_nodes[::stride]
        elem = np.repeat(np.arange(P // stride), stride)  # coarse element of each fine panel
        width = np.diff(coarse)[elem]
        s_q = quad(grid.s)
        right = (s_q - coarse[elem][:, None]) / width[:, None]
        left = 1.0 - right
        n = len(coarse)
        self.n = n
        self.stride = stride
        self.kd = np.bincount(elem, (stiff_w.sum(axis=1)) / width ** 2, minlength=n - 1)
        el = elem.repeat(m)
        mw = mass_w.ravel()
        self.m_ll = np.bincount(el, mw * left.ravel() ** 2, minlength=n - 1)
        self.m_lr = np.bincount(el, mw * (left * right).ravel(), minlength=n - 1)
        self.m_rr = np.bincount(el, mw * right.ravel() ** 2, minlength=n - 1)
        # assemble diagonals
        self.K_diag = np.zeros(n)
        self.K_diag[:-1] += self.kd
        self.K_diag[1:] += self.kd
        self.K_off = -self.kd
        self.M_diag = np.zeros(n)
        self.M_diag[:-1] += self.m_ll
        self.M_diag[1:] += self.m_rr
        self.M_off = self.m_lr
        self.M_diag[0] += lumped[0]
        self.M_diag[-1] += lumped[1]
        if not np.all(self.M_diag > 0):
            raise DegenerateMeasure("mass form is singular: the density vanishes on a whole element")
        # symmetric diagonal scaling keeps Sturm counts invariant and entries O(1)
        self.scale = 1.0 / np.sqrt(self.M_diag)
        sc, so = self.scale, self.scale[:-1] * self.scale[1:]
        self.Kd, self.Ko = self.K_diag * sc ** 2, self.K_off * so
        self.Md, self.Mo = np.ones(n), self.M_off * so

    def count_below(self, sigmas):
        """Number of eigenvalues below each sigma (Sturm count via LDL^T)."""
        sig = np.asarray(sigmas, dtype=float)
        a = self.Kd[:, None] - sig[None, :] * self.Md[:, None]
        b = self.Ko[:, None] - sig[None, :] * self.Mo[:, None]
        tiny = np.finfo(float).tiny ** 0.5
        d = a[0].copy()
        count = (d < 0).astype(int)
        for i in range(1, self.n):
            d = np.where(d == 0, tiny, d)
            d = a[i] - b[i - 1] * (b[i - 1] / d)
            count += d < 0
        return count

    def quad_forms(self, u):
        """``u^T K u`` and ``u^T M u`` for scaled coordinates ``u``."""
        ku = self.Kd * u
        ku[:-1] += self.Ko * u[1:]
        ku[1:] += self.Ko * u[:-1]
        mu = self.Md * u
        mu[:-1] += self.Mo * u[1:]
        mu[1:] += self.Mo * u[:-1]
        return float(u @ ku), float(u @ mu), mu

    def second_eigenvalue(self, upper, rtol=1e-14, sections=63):
        lo, hi = 0.0, upper
        if self.count_below([hi])[0] < 2:
            hi = upper * 2.0
            while self.count_below([hi])[0] < 2:
                hi *= 2.0
                if hi > 1e12:
                    raise NoGapDetected("no second eigenvalue below 1e12")
        for _ in range(200):
            if hi - lo <= rtol * hi:
                break
            grid = np.linspace(lo, hi, sections + 2)[1:-1]
            counts = self.count_below(grid)
            above = np.flatnonzero(counts >= 2)
            k = int(above[0]) if len(above) else len(grid)
            new_hi = grid[k] if k < len(grid) else hi
            new_lo = grid[k - 1] if k > 0 else lo
            lo, hi = new_lo, new_hi
        return 0.5 * (lo + hi)

    def eigenvector(self, sigma, start, iters=6):
        """Inverse iteration with constants projected out in the mass inner product."""
        ones = 1.0 / self.scale  # the constant function in scaled coordinates
        _, mm1, m1 = self.quad_forms(ones)
        shift = sigma * (1.0 - 1e-7)
        ab = np.zeros((3, self.n))
        ab[0, 1:] = self.Ko - shift * self.Mo
        ab[1] = self.Kd - shift * self.Md
        ab[2, :-1] = self.Ko - shift * self.Mo
        u = start.copy()
        lam = sigma
        for _ in range(iters):
            u = u - (m1 @ u) / mm1 * ones
            _, _, mu = self.quad_forms(u)
            u = solve_banded((1, 1), ab, mu)
            u = u - (m1 @ u) / mm1 * ones
            uk, um, _ = self.quad_forms(u)
            u /= math.sqrt(um)
            lam = uk / um
        return lam, u


def spectral_gap(density, spec, grid=None, *, h=None, levels=3, rtol=1e-13):
    """Sharp spectral gap of ``nu = density dx`` with carre du champ ``h psi'^2``.

    ``density`` is an array on ``grid.x`` or any object with ``grid`` and
    ``density`` attributes (a quotient or perturbed measure).  ``levels``
    successive refinements (strides ``2**(levels-1)`` down to 1) are solved.
    """
    rho, full_grid, h, window = _unpack(density, spec, grid, h)
    full_rho = rho
    grid, rho, h, lumped = _window_grid(full_grid, rho, h, window, 2 ** (levels - 1))
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise DegenerateMeasure("density must be finite and nonnegative")
    strides = [2 ** k for k in range(levels - 1, -1, -1)]
    strides = [s for s in strides if grid.n_panels % s == 0 and grid.n_panels // s >= 8]
    lams, panels = [], []
    upper = None
    for stride in strides:
        pencil = _Pencil(grid, rho, h, stride, lumped)
        nodes_x = grid.x[grid.node_index][::stride]
        start = nodes_x / pencil.scale
        uk, um, _ = pencil.quad_forms(start)
        if upper is None:
            ones = 1.0 / pencil.scale
            _, mm1, m1 = pencil.quad_forms(ones)
            centred = start - (m1 @ start) / mm1 * ones
            ck, cm, _ = pencil.quad_forms(centred)
            upper = ck / cm * (1.0 + 1e-9)
        lam = pencil.second_eigenvalue(upper, rtol=rtol)
        if lam <= GAP_FLOOR:
            raise NoGapDetected(f"second eigenvalue {lam:.3g} is not separated from 0")
        lams.append(lam)
        panels.append(grid.n_panels // stride)
        upper = lam * (1.0 + 1e-9)  # nested spaces: the finer value cannot exceed the coarser
    lam_r, u = pencil.eigenvector(lams[-1], start)
    nodal = u * pencil.scale
    # outside the window the eigenfunction is continued as a constant
    dpsi_sub = np.repeat(np.diff(nodal) / np.diff(grid.s_nodes), grid.m + 1)
    dpsi_sub = np.concatenate((dpsi_sub, dpsi_sub[-1:])) / grid.dxds
    with np.errstate(invalid="ignore"):
        energy = grid.integrate(np.where(grid.dxds > 0, h * dpsi_sub ** 2 * rho, 0.0))
    g, rho = full_grid, full_rho
    psi = np.interp(g.s, grid.s_nodes, nodal)
    mean = g.integrate(rho * psi)
    var = g.integrate(rho * (psi - mean) ** 2)
    psi = (psi - mean) / math.sqrt(var)
    residual = abs(energy / var - lams[-1]) / lams[-1]
    x_mean = g.integrate(rho * g.x)
    x_sd = math.sqrt(g.integrate(rho * (g.x - x_mean) ** 2))
    corr = g.integrate(rho * psi * (g.x - x_mean)) / x_sd
    if corr < 0:
        psi, corr = -psi, -corr
    if len(lams) >= 2:
        extrap = (4.0 * lams[-1] - lams[-2]) / 3.0
        precision = abs(lams[-1] - lams[-2])
    else:
        extrap, precision = lams[-1], math.nan
    return SpectralResult(lams[-1], psi, residual, lams, panels, extrap, precision, corr)


def rayleigh_quotient(density, spec, psi, grid=None, *, h=None, psi_prime=None):
    """``int h psi'^2 d nu / Var_nu(psi)`` with ``psi'`` differentiated on the grid if not given."""
    rho, grid, h, _ = _unpack(density, spec, grid, h)
    vals = np.asarray(psi(grid.x), dtype=float) * np.ones_like(grid.x)
    dvals = grid.derivative(vals) if psi_prime is None else np.asarray(psi_prime(grid.x), dtype=float) * np.ones_like(grid.x)
    mass = grid.integrate(rho)
    mean = grid.integrate(rho * vals) / mass
    var = grid.integrate(rho * (vals - mean) ** 2) / mass
    if not var > 1e-14 * (1.0 + mean * mean):
        raise ConstantTestFunction("test function has zero variance under the measure")
    return grid.integrate(h * dvals ** 2 * rho) / mass / var
