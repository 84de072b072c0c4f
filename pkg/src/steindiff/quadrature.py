"""Piecewise Gauss-Legendre tables for cumulative integrals against a density.

The integrals that drive the diffusion coefficient and the Stein solution are
all of the form ``int_l^x phi(y) dy`` with ``phi`` smooth between a known set
of breakpoints.  A :class:`QuadratureGrid` fixes a node set (quantile spaced,
plus the breakpoints), and a :class:`CumulativeTable` stores the integral of
one integrand between consecutive nodes.  Values at arbitrary points are the
tabulated prefix (or suffix) plus one local Gauss-Legendre piece, so the
difference of two nearby evaluations is accurate to rounding.  The two end
pieces, which may reach an infinite or singular endpoint, go through QUADPACK.
"""
from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate

GL_ORDER = 24
QUAD_EPSABS = 1e-300
QUAD_EPSREL = 1e-11


@lru_cache(maxsize=None)
def gauss_legendre_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on (0, 1)."""
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (t + 1.0), 0.5 * w


def gl_integrate(fun, lo, hi, order: int = GL_ORDER) -> np.ndarray:
    """Integrate ``fun`` over ``[lo, hi]`` elementwise (arrays broadcast)."""
    t, w = gauss_legendre_unit(order)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    y = lo + (hi - lo) * t
    return ((hi - lo) * w * fun(y)).sum(axis=-1)


def _inverted(fun, x0):
    def g(s):
        v = float(fun(np.float64(x0 / s))) * abs(x0) / (s * s)
        return v if math.isfinite(v) else 0.0
    return g


def quad(fun, lo: float, hi: float, points=None) -> float:
    """Scalar adaptive Gauss-Kronrod integral with the package tolerances.

    A half-line ``[x0, inf)`` with ``x0 > 0`` is mapped to ``(0, 1]`` by
    ``y = x0 / s``, which turns power-law tails into bounded integrands
    (QUADPACK's own mapping misses mass far from ``x0``).
    """
    if lo == hi:
        return 0.0
    sign = 1.0
    if lo > hi:
        lo, hi, sign = hi, lo, -1.0
    if hi == math.inf and lo > 0:
        return sign * quad(_inverted(fun, lo), 0.0, 1.0)
    if lo == -math.inf and hi < 0:
        return sign * quad(_inverted(fun, hi), 0.0, 1.0)
    scalar = lambda y: float(fun(np.float64(y)))  # noqa: E731
    kw = dict(epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400)
    if points is not None and math.isfinite(lo) and math.isfinite(hi):
        inner = [p for p in points if lo < p < hi]
        if inner:
            kw["points"] = inner
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(scalar, lo, hi, **kw)
    return sign * val


class QuadratureGrid:
    """Sorted node set on ``[lower, upper]`` with Gauss-Legendre abscissae.

    ``nodes`` are the tabulation points.  ``lower``/``upper`` are the true
    integration limits (possibly infinite); the pieces ``[lower, nodes[0]]``
    and ``[nodes[-1], upper]`` are handled adaptively.
    """

    def __init__(self, nodes, lower: float, upper: float, order: int = GL_ORDER,
                 breakpoints=()):
        nodes = np.unique(np.asarray(nodes, dtype=float))
        nodes = nodes[(nodes >= lower) & (nodes <= upper) & np.isfinite(nodes)]
        if nodes.size < 2:
            raise ValueError("a quadrature grid needs at least two finite nodes")
        self.nodes = nodes
        self.lower = float(lower)
        self.upper = float(upper)
        self.order = order
        self.breakpoints = tuple(sorted(float(b) for b in breakpoints))
        t, w = gauss_legendre_unit(order)
        h = np.diff(nodes)
        self.abscissae = nodes[:-1, None] + h[:, None] * t
        self.weights = h[:, None] * w

    def with_breakpoints(self, points) -> "QuadratureGrid":
        pts = [p for p in points if self.nodes[0] < p < self.nodes[-1]]
        if not pts:
            return self
        return QuadratureGrid(np.concatenate([self.nodes, pts]), self.lower,
                              self.upper, self.order,
                              self.breakpoints + tuple(pts))

    def restrict(self, lo: float, hi: float) -> "QuadratureGrid":
        """Sub-grid on ``[lo, hi]`` with no end pieces beyond it."""
        inner = self.nodes[(self.nodes > lo) & (self.nodes < hi)]
        return QuadratureGrid(np.concatenate([[lo], inner, [hi]]), lo, hi,
                              self.order, self.breakpoints)


class CumulativeTable:
    """Prefix and suffix integrals of one integrand on a :class:`QuadratureGrid`.

    Parameters
    ----------
    grid : QuadratureGrid
    integrand : callable
        Vectorised ``y -> phi(y)`` accepting arrays of any shape.
    values : ndarray, optional
        Precomputed ``integrand(grid.abscissae)``.
    """

    def __init__(self, grid: QuadratureGrid, integrand, values=None):
        self.grid = grid
        self.integrand = integrand
        if values is None:
            values = integrand(grid.abscissae)
        pieces = (np.asarray(values) * grid.weights).sum(axis=1)
        nodes = grid.nodes
        self.head = quad(integrand, grid.lower, nodes[0], grid.breakpoints)
        self.tail = quad(integrand, nodes[-1], grid.upper, grid.breakpoints)
        self.pieces = pieces
        zero = np.zeros(1)
        self.lower_at_nodes = self.head + np.concatenate([zero, np.cumsum(pieces)])
        self.upper_at_nodes = self.tail + np.concatenate(
            [np.cumsum(pieces[::-1])[::-1], zero])
        self.total = self.head + float(pieces.sum()) + self.tail

    def lower(self, x) -> np.ndarray:
        """``int_lower^x phi``."""
        x = np.asarray(x, dtype=float)
        nodes = self.grid.nodes
        flat = np.atleast_1d(x).ravel()
        out = np.empty_like(flat)
        inside = (flat >= nodes[0]) & (flat <= nodes[-1])
        if inside.any():
            xi = flat[inside]
            k = np.clip(np.searchsorted(nodes, xi, side="right") - 1, 0, nodes.size - 1)
            out[inside] = self.lower_at_nodes[k] + gl_integrate(
                self.integrand, nodes[k], xi, self.grid.order)
        for i in np.flatnonzero(~inside):
            xv = flat[i]
            if xv < nodes[0]:
                out[i] = quad(self.integrand, self.grid.lower, xv)
            else:
                out[i] = self.lower_at_nodes[-1] + quad(self.integrand, nodes[-1], xv)
        return out.reshape(x.shape)

    def upper(self, x) -> np.ndarray:
        """``int_x^upper phi``."""
        x = np.asarray(x, dtype=float)
        nodes = self.grid.nodes
        flat = np.atleast_1d(x).ravel()
        out = np.empty_like(flat)
        inside = (flat >= nodes[0]) & (flat <= nodes[-1])
        if inside.any():
            xi = flat[inside]
            k = np.clip(np.searchsorted(nodes, xi, side="left"), 0, nodes.size - 1)
            out[inside] = self.upper_at_nodes[k] + gl_integrate(
                self.integrand, xi, nodes[k], self.grid.order)
        for i in np.flatnonzero(~inside):
            xv = flat[i]
            if xv > nodes[-1]:
                out[i] = quad(self.integrand, xv, self.grid.upper)
            else:
                out[i] = self.upper_at_nodes[0] + quad(self.integrand, xv, nodes[0])
        return out.reshape(x.shape)

    def split(self, x, switch: float) -> np.ndarray:
        """Lower form left of ``switch``, minus the upper form right of it.

        Equal to ``lower(x)`` whenever the integrand has total integral zero,
        but without the cancellation ``lower`` suffers in the right tail.
        """
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        left = x <= switch
        if left.any():
            out[left] = self.lower(x[left])
        if (~left).any():
            out[~left] = -self.upper(x[~left])
        return out


BULK_LEVELS = 4096
TAIL_LEVELS = 10.0 ** -np.arange(4.0, 12.01, 0.5)


def quantile_nodes(density, bulk: int = BULK_LEVELS, extra=()) -> np.ndarray:
    """Equal-probability nodes plus half-decade tail quantiles and breakpoints.

    Tail levels run from ``1e-12`` up to the first bulk level, so no pair of
    neighbouring nodes is more than half a decade apart in probability.
    """
    levels = (np.arange(bulk) + 0.5) / bulk
    first = 0.5 / bulk
    tails = np.concatenate([TAIL_LEVELS, 10.0 ** np.arange(-4.0, np.log10(first), 0.5)])
    tails = np.unique(tails[tails < first])
    nodes = np.concatenate([density.ppf(levels), density.ppf(tails),
                            density.isf(tails), np.asarray(density.breakpoints),
                            np.asarray(extra, dtype=float)])
    lo, hi = density.support.lower, density.support.upper
    nodes = nodes[np.isfinite(nodes) & (nodes > lo) & (nodes < hi)]
    return np.unique(nodes)


def density_grid(density, bulk: int = BULK_LEVELS, extra=()) -> QuadratureGrid:
    """Quadrature grid spanning the whole support of ``density``."""
    brk = tuple(density.breakpoints) + tuple(extra)
    return QuadratureGrid(quantile_nodes(density, bulk, extra), density.support.lower,
                          density.support.upper, breakpoints=brk)
