"""Panel quadrature grids on (possibly infinite) intervals.

Every grid lives in a computational coordinate ``s``.  A double-exponential
map sends ``s`` to the physical coordinate ``x``: sinh-sinh for the whole
line, exp-sinh for half lines and tanh-sinh for bounded intervals.  Under
these maps algebraic endpoint singularities and exponential tails become
smooth, rapidly decaying integrands in ``s``, so composite Gauss-Legendre
panels with uniform width in ``s`` integrate them to near machine precision.

Each map is shifted so that ``s = 0`` corresponds to ``x = 0``; the node
``s = 0`` is always part of a measure grid, which keeps reference-point
integrals such as ``int_0^t`` exact at the nodes.

Sample points are stored flat: for panel ``k`` the left node comes first,
followed by its ``m`` Gauss points; the last node closes the array.
Distances to finite endpoints (``da`` and ``db``) are carried alongside
``x`` because ``x`` itself cannot resolve ``b - x`` once it drops below the
machine epsilon of ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

HALF_PI = 0.5 * math.pi

# Guards for the outward march: past these, the map is no longer resolvable.
MIN_END_DISTANCE = 1e-280
MAX_ABS_X = 1e15


@lru_cache(maxsize=None)
def gauss_panel(m):
    """Gauss-Legendre rule on [-1, 1] with integration and differentiation helpers.

    Returns ``(t, w, left, right, diff)`` where ``left[i, j] = int_{-1}^{t_i} l_j``,
    ``right[i, j] = int_{t_i}^{1} l_j`` for the Lagrange basis ``l_j`` on the
    Gauss points, and ``diff`` is the differentiation matrix on the extended
    point set ``[-1, t_1, ..., t_m, 1]``.
    """
    t, w = legendre.leggauss(m)
    coeffs = np.linalg.inv(legendre.legvander(t, m - 1))  # column j: Legendre coefficients of l_j
    antider = legendre.legint(coeffs, lbnd=-1.0)
    left = legendre.legval(t, antider).T
    right = w[None, :] - left

    ext = np.concatenate(([-1.0], t, [1.0]))
    diffs = ext[:, None] - ext[None, :]
    np.fill_diagonal(diffs, 1.0)
    bary = 1.0 / np.prod(diffs, axis=1)
    diff = (bary[None, :] / bary[:, None]) / diffs
    np.fill_diagonal(diff, 0.0)
    np.fill_diagonal(diff, -diff.sum(axis=1))
    return t, w, left, right, diff


@dataclass(frozen=True)
class IntervalMap:
    """Double-exponential change of variables ``x = X(s)`` with ``X(0) = 0``."""

    kind: str  # "line" | "left_open" | "right_open" | "finite" | "affine"
    a: float
    b: float
    shift: float = 0.0

    @classmethod
    def for_interval(cls, a, b):
        if math.isinf(a) and math.isinf(b):
            return cls("line", a, b)
        if math.isinf(a):
            return cls("left_open", a, b)
        if math.isinf(b):
            return cls("right_open", a, b)
        c, r = 0.5 * (a + b), 0.5 * (b - a)
        g0 = math.atanh(-c / r)
        return cls("finite", a, b, shift=math.asinh(g0 / HALF_PI))

    @property
    def transforms(self):
        """Substitution used at each endpoint, for reporting."""
        names = {
            "line": ("sinh-sinh tail map", "sinh-sinh tail map"),
            "left_open": ("exp-sinh tail map", "exp-sinh power map"),
            "right_open": ("exp-sinh power map", "exp-sinh tail map"),
            "finite": ("tanh-sinh power map", "tanh-sinh power map"),
            "affine": ("identity", "identity"),
        }
        return names[self.kind]

    def evaluate(self, s):
        """Return ``(x, da, db, dxds)``; ``da``/``db`` are ``inf`` at infinite ends."""
        s = np.asarray(s, dtype=float)
        inf = np.full_like(s, np.inf)
        if self.kind == "affine":
            x = s.copy()
            return x, x - self.a, self.b - x, np.ones_like(s)
        g = HALF_PI * np.sinh(s + self.shift)
        dg = HALF_PI * np.cosh(s + self.shift)
        if self.kind == "line":
            return np.sinh(g), inf, inf, np.cosh(g) * dg
        if self.kind == "left_open":
            db = self.b * np.exp(-g)
            return self.b - db, inf, db, db * dg
        if self.kind == "right_open":
            da = -self.a * np.exp(g)
            return self.a + da, da, inf, da * dg
        c, r = 0.5 * (self.a + self.b), 0.5 * (self.b - self.a)
        ag = np.abs(g)
        e = np.exp(-2.0 * ag)
        small = 2.0 * r * e / (1.0 + e)  # distance to the nearer end
        large = 2.0 * r - small
        da = np.where(g < 0, small, large)
        db = np.where(g < 0, large, small)
        x = np.where(g < 0, self.a + da, self.b - db)
        x = np.where(np.abs(x - c) < 0.5 * r, c + r * np.tanh(g), x)
        sech2 = 4.0 * e / (1.0 + e) ** 2
        return x, da, db, r * sech2 * dg


@dataclass(frozen=True, eq=False)
class Grid:
    """Composite Gauss-Legendre grid; see the module docstring for layout."""

    imap: IntervalMap
    s_nodes: np.ndarray
    m: int
    x: np.ndarray = field(repr=False)
    da: np.ndarray = field(repr=False)
    db: np.ndarray = field(repr=False)
    dxds: np.ndarray = field(repr=False)
    wts: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, imap, s_nodes, m=8):
        s_nodes = np.asarray(s_nodes, dtype=float)
        if np.any(np.diff(s_nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        t, w, *_ = gauss_panel(m)
        half = 0.5 * np.diff(s_nodes)
        mid = 0.5 * (s_nodes[1:] + s_nodes[:-1])
        quad_s = mid[:, None] + half[:, None] * t[None, :]
        blocks = np.concatenate((s_nodes[:-1, None], quad_s), axis=1)
        s = np.concatenate((blocks.ravel(), s_nodes[-1:]))
        x, da, db, dxds = imap.evaluate(s)
        wblocks = np.concatenate((np.zeros((len(half), 1)), half[:, None] * w[None, :]), axis=1)
        wts = np.concatenate((wblocks.ravel(), [0.0])) * dxds
        return cls(imap, s_nodes, m, x, da, db, dxds, wts, s)

    @classmethod
    def uniform(cls, lo, hi, n, m=8):
        """Plain grid on a bounded interval with nodes equally spaced in ``x``."""
        return cls.build(IntervalMap("affine", lo, hi), np.linspace(lo, hi, n), m)

    # -- layout helpers -------------------------------------------------
    @property
    def n_nodes(self):
        return len(self.s_nodes)

    @property
    def n_panels(self):
        return len(self.s_nodes) - 1

    @property
    def node_index(self):
        return np.arange(self.n_nodes) * (self.m + 1)

    @property
    def nodes(self):
        return self.x[self.node_index]

    @property
    def truncation(self):
        return float(self.x[0]), float(self.x[-1])

    @property
    def endpoint_transforms(self):
        return self.imap.transforms

    @property
    def zero_index(self):
        """Flat index of the node ``x = 0`` (raises if absent)."""
        k = np.flatnonzero(self.s_nodes == 0.0)
        if len(k) != 1:
            raise ValueError("grid has no node at s = 0")
        return int(k[0]) * (self.m + 1)

    def _quad(self, vals):
        P, m = self.n_panels, self.m
        return np.asarray(vals)[:-1].reshape(P, m + 1)[:, 1:]

    def _jac(self):
        half = 0.5 * np.diff(self.s_nodes)
        return half[:, None] * self._quad(self.dxds)

    # -- calculus -------------------------------------------------------
    def integrate(self, vals):
        return float(np.dot(self.wts, vals))

    def cumulative(self, vals):
        """``int_{x_0}^{x_i} f dx`` at every sample point (accurate at the left end)."""
        _, w, left, _, _ = gauss_panel(self.m)
        fj = self._quad(vals) * self._jac()
        totals = fj @ w
        at_nodes = np.concatenate(([0.0], np.cumsum(totals)))
        inner = at_nodes[:-1, None] + fj @ left.T
        return self._assemble(at_nodes, inner)

    def cumulative_right(self, vals):
        """``int_{x_i}^{x_end} f dx`` at every sample point (accurate at the right end)."""
        _, w, _, right, _ = gauss_panel(self.m)
        fj = self._quad(vals) * self._jac()
        totals = fj @ w
        at_nodes = np.concatenate((np.cumsum(totals[::-1])[::-1], [0.0]))
        inner = at_nodes[1:, None] + fj @ right.T
        return self._assemble(at_nodes, inner)

    def derivative(self, vals):
        """Spectral ``df/dx`` panel by panel; node values average both sides."""
        *_, diff = gauss_panel(self.m)
        vals = np.asarray(vals, dtype=float)
        P, m = self.n_panels, self.m
        blocks = np.concatenate((vals[:-1].reshape(P, m + 1), vals[m + 1 :: m + 1, None]), axis=1)
        half = 0.5 * np.diff(self.s_nodes)
        ds = (blocks @ diff.T) / half[:, None]
        out = np.empty_like(vals)
        body = out[:-1].reshape(P, m + 1)
        body[:, 1:] = ds[:, 1:-1]
        body[:, 0] = ds[:, 0]
        body[1:, 0] = 0.5 * (ds[1:, 0] + ds[:-1, -1])
        out[-1] = ds[-1, -1]
        return out / self.dxds

    def _assemble(self, at_nodes, inner):
        P, m = self.n_panels, self.m
        out = np.empty(P * (m + 1) + 1)
        body = out[:-1].reshape(P, m + 1)
        body[:, 0] = at_nodes[:-1]
        body[:, 1:] = inner
        out[-1] = at_nodes[-1]
        return out

    def coarsen(self, stride):
        """Grid on every ``stride``-th node (nested, same map)."""
        if (self.n_nodes - 1) % stride:
            raise ValueError("stride must divide the number of panels")
        return Grid.build(self.imap, self.s_nodes[::stride], self.m)
