"""Target densities: built-in parametric families and tabulated user input."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.interpolate import PchipInterpolator

from .errors import ConstructionError, DomainError
from .quadrature import gauss_legendre_unit

FAMILIES = ("normal", "gamma", "uniform", "beta", "lognormal", "pareto", "laplace")


@dataclass(frozen=True)
class SupportInterval:
    """Open interval ``(lower, upper)``; endpoints may be ``-inf``/``inf``."""

    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if math.isnan(lo) or math.isnan(hi):
            raise ConstructionError("support endpoints must not be NaN")
        if not lo < hi:
            raise ConstructionError(f"support needs lower < upper, got ({lo}, {hi})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def finite_lower(self) -> bool:
        return math.isfinite(self.lower)

    @property
    def finite_upper(self) -> bool:
        return math.isfinite(self.upper)

    def contains(self, x) -> np.ndarray:
        """Strict interior membership."""
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper)

    def __str__(self):
        return f"({self.lower:g}, {self.upper:g})"


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise DomainError("NaN input to a density evaluator")
    return x


class TargetDensity:
    """Base class for a one-dimensional density on an interval.

    Subclasses provide ``_logpdf``, ``_cdf``, ``_sf``, ``ppf``, ``isf`` and
    ``_partial_first_moment`` on interior points; the public wrappers here
    handle points outside the support and NaN checking.
    """

    family: str = "abstract"

    def __init__(self, support: SupportInterval, params: dict, mean: float,
                 variance: float, breakpoints=()):
        self.support = support
        self.params = dict(params)
        self.mean = float(mean)
        self.variance = float(variance)
        self.breakpoints = tuple(float(b) for b in breakpoints)

    # subclasses -------------------------------------------------------
    def _logpdf(self, x):
        raise NotImplementedError

    def _cdf(self, x):
        raise NotImplementedError

    def _sf(self, x):
        return 1.0 - self._cdf(x)

    def _partial_first_moment(self, x):
        raise NotImplementedError

    def ppf(self, q):
        raise NotImplementedError

    def isf(self, q):
        return self.ppf(1.0 - np.asarray(q, dtype=float))

    # public -----------------------------------------------------------
    def logpdf(self, x) -> np.ndarray:
        x = _check_input(x)
        inside = self.support.contains(x)
        out = np.full(x.shape, -np.inf)
        if inside.any():
            out[inside] = self._logpdf(x[inside])
        return out

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf(self, x) -> np.ndarray:
        x = _check_input(x)
        out = np.where(x >= self.support.upper, 1.0, 0.0)
        inside = self.support.contains(x)
        if inside.any():
            out[inside] = self._cdf(x[inside])
        return out

    def sf(self, x) -> np.ndarray:
        x = _check_input(x)
        out = np.where(x <= self.support.lower, 1.0, 0.0)
        inside = self.support.contains(x)
        if inside.any():
            out[inside] = self._sf(x[inside])
        return out

    def partial_first_moment(self, x) -> np.ndarray:
        """``int_l^x y p(y) dy``; ``x`` must lie in the closed support."""
        x = _check_input(x)
        if ((x < self.support.lower) | (x > self.support.upper)).any():
            raise DomainError(f"partial first moment needs x in {self.support}")
        out = np.where(x >= self.support.upper, self.mean, 0.0)
        inside = self.support.contains(x)
        if inside.any():
            out[inside] = self._partial_first_moment(x[inside])
        return out

    @property
    def median(self) -> float:
        return float(self.ppf(0.5))

    def quantile_spread(self) -> float:
        """Distance between the 1% and 99% quantiles."""
        return float(self.ppf(0.99) - self.ppf(0.01))

    def __repr__(self):
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({args})"


class _ScipyFamily(TargetDensity):
    """Family backed by a frozen ``scipy.stats`` distribution."""

    def __init__(self, family, dist, support, params, breakpoints=(), mean=None,
                 variance=None):
        self.family = family
        self._dist = dist
        m = dist.mean() if mean is None else mean
        v = dist.var() if variance is None else variance
        super().__init__(support, params, m, v, breakpoints)

    def _logpdf(self, x):
        return self._dist.logpdf(x)

    def _cdf(self, x):
        return self._dist.cdf(x)

    def _sf(self, x):
        return self._dist.sf(x)

    def ppf(self, q):
        return self._dist.ppf(q)

    def isf(self, q):
        return self._dist.isf(q)


class NormalDensity(_ScipyFamily):
    def __init__(self, mu=0.0, sigma=1.0):
        super().__init__("normal", stats.norm(mu, sigma),
                         SupportInterval(-np.inf, np.inf), dict(mu=mu, sigma=sigma))

    def _logpdf(self, x):
        mu, sd = self.params["mu"], self.params["sigma"]
        z = (x - mu) / sd
        return -0.5 * z * z - math.log(sd * math.sqrt(2 * math.pi))

    def _partial_first_moment(self, x):
        mu, s = self.params["mu"], self.params["sigma"]
        z = (x - mu) / s
        return mu * special.ndtr(z) - s * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


class GammaDensity(_ScipyFamily):
    """Gamma law with shape ``k`` and rate ``lam``."""

    def __init__(self, shape=0.5, rate=0.5):
        super().__init__("gamma", stats.gamma(shape, scale=1.0 / rate),
                         SupportInterval(0.0, np.inf), dict(shape=shape, rate=rate))

    def _logpdf(self, x):
        k, lam = self.params["shape"], self.params["rate"]
        return k * math.log(lam) - special.gammaln(k) + (k - 1.0) * np.log(x) - lam * x

    def _partial_first_moment(self, x):
        k, lam = self.params["shape"], self.params["rate"]
        return k / lam * special.gammainc(k + 1.0, lam * x)


class UniformDensity(_ScipyFamily):
    def __init__(self, lo=0.0, hi=1.0):
        super().__init__("uniform", stats.uniform(lo, hi - lo),
                         SupportInterval(lo, hi), dict(lo=lo, hi=hi))

    def _logpdf(self, x):
        return np.full(np.shape(x), -math.log(self.params["hi"] - self.params["lo"]))

    def _partial_first_moment(self, x):
        lo, hi = self.params["lo"], self.params["hi"]
        return (x * x - lo * lo) / (2.0 * (hi - lo))


class BetaDensity(_ScipyFamily):
    def __init__(self, alpha=0.5, beta=1.0):
        super().__init__("beta", stats.beta(alpha, beta),
                         SupportInterval(0.0, 1.0), dict(alpha=alpha, beta=beta))

    def _logpdf(self, x):
        al, be = self.params["alpha"], self.params["beta"]
        return (al - 1.0) * np.log(x) + (be - 1.0) * np.log1p(-x) - special.betaln(al, be)

    def _partial_first_moment(self, x):
        al, be = self.params["alpha"], self.params["beta"]
        return al / (al + be) * special.betainc(al + 1.0, be, x)


class LognormalDensity(_ScipyFamily):
    """Law of ``exp(delta + sigma Z)``."""

    def __init__(self, delta=0.0, sigma=1.0):
        super().__init__("lognormal", stats.lognorm(sigma, scale=math.exp(delta)),
                         SupportInterval(0.0, np.inf), dict(delta=delta, sigma=sigma))

    def _logpdf(self, x):
        d, sd = self.params["delta"], self.params["sigma"]
        lx = np.log(x)
        z = (lx - d) / sd
        return -0.5 * z * z - lx - math.log(sd * math.sqrt(2 * math.pi))

    def _partial_first_moment(self, x):
        d, s = self.params["delta"], self.params["sigma"]
        z = (np.log(x) - d) / s
        return self.mean * special.ndtr(z - s)


class ParetoDensity(_ScipyFamily):
    """Shifted Pareto (Lomax) law with density ``alpha (1+x)^(-alpha-1)``."""

    def __init__(self, alpha=2.0):
        var = np.inf if alpha <= 2 else None
        super().__init__("pareto", stats.lomax(alpha), SupportInterval(0.0, np.inf),
                         dict(alpha=alpha), variance=var)

    def _logpdf(self, x):
        al = self.params["alpha"]
        return math.log(al) - (al + 1.0) * np.log1p(x)

    def _partial_first_moment(self, x):
        al = self.params["alpha"]
        t = 1.0 + x
        return al * (-np.expm1((1.0 - al) * np.log1p(x))) / (al - 1.0) + np.expm1(-al * np.log(t))


class LaplaceDensity(_ScipyFamily):
    """Centered Laplace law with density ``alpha/2 exp(-alpha |x|)``."""

    def __init__(self, alpha=1.0):
        super().__init__("laplace", stats.laplace(scale=1.0 / alpha),
                         SupportInterval(-np.inf, np.inf), dict(alpha=alpha),
                         breakpoints=(0.0,))

    def _logpdf(self, x):
        al = self.params["alpha"]
        return math.log(0.5 * al) - al * np.abs(x)

    def _partial_first_moment(self, x):
        al = self.params["alpha"]
        neg = x <= 0
        xm = np.where(neg, x, 0.0)
        xp = np.where(neg, 0.0, x)
        return np.where(neg, 0.5 * np.exp(al * xm) * (xm - 1.0 / al),
                        -0.5 * np.exp(-al * xp) * (xp + 1.0 / al))


_CONSTRAINTS = {
    "normal": (("mu", "sigma"), lambda p: p["sigma"] > 0, "sigma > 0"),
    "gamma": (("shape", "rate"), lambda p: p["shape"] > 0 and p["rate"] > 0,
              "shape > 0 and rate > 0"),
    "uniform": (("lo", "hi"), lambda p: p["lo"] < p["hi"], "lo < hi"),
    "beta": (("alpha", "beta"), lambda p: p["alpha"] > 0 and p["beta"] > 0,
             "alpha > 0 and beta > 0"),
    "lognormal": (("delta", "sigma"), lambda p: p["sigma"] > 0, "sigma > 0"),
    "pareto": (("alpha",), lambda p: p["alpha"] > 1, "alpha > 1"),
    "laplace": (("alpha",), lambda p: p["alpha"] > 0, "alpha > 0"),
}

_DEFAULTS = {
    "normal": dict(mu=0.0, sigma=1.0),
    "gamma": dict(shape=0.5, rate=0.5),
    "uniform": dict(lo=0.0, hi=1.0),
    "beta": dict(alpha=0.5, beta=1.0),
    "lognormal": dict(delta=0.0, sigma=1.0),
    "pareto": dict(alpha=2.0),
    "laplace": dict(alpha=1.0),
}

_CLASSES = {
    "normal": NormalDensity, "gamma": GammaDensity, "uniform": UniformDensity,
    "beta": BetaDensity, "lognormal": LognormalDensity, "pareto": ParetoDensity,
    "laplace": LaplaceDensity,
}


def make_family(family: str, params: dict | None = None) -> TargetDensity:
    """Build a built-in density.

    ``family`` is one of :data:`FAMILIES` or ``"chi_square"`` (with optional
    ``df``, default 1), which maps to ``gamma(df/2, 1/2)``.  Missing
    parameters take the defaults used by the worked examples.

    Examples
    --------
    >>> make_family("laplace", {"alpha": 1}).pdf(0.0)
    array(0.5)
    """
    params = dict(params or {})
    if family in ("chi_square", "chi2", "chisquare"):
        df = float(params.pop("df", 1.0))
        if params:
            raise ConstructionError(f"unknown chi_square parameters {sorted(params)}")
        if not df > 0:
            raise ConstructionError("chi_square needs df > 0")
        return GammaDensity(df / 2.0, 0.5)
    if family not in _CLASSES:
        raise ConstructionError(
            f"unknown family {family!r}; choose from {', '.join(FAMILIES)}, chi_square")
    names, check, text = _CONSTRAINTS[family]
    unknown = set(params) - set(names)
    if unknown:
        raise ConstructionError(f"unknown {family} parameters {sorted(unknown)}")
    full = {**_DEFAULTS[family], **{k: float(v) for k, v in params.items()}}
    if not all(math.isfinite(full[k]) for k in names) or not check(full):
        raise ConstructionError(f"{family} parameters violate {text}: {full}")
    return _CLASSES[family](**full)


class TabulatedDensity(TargetDensity):
    """Density given by samples on a grid, interpolated by monotone cubics.

    The interpolant is renormalised to unit mass.  Cdf and partial first
    moments are exact integrals of the piecewise cubic.
    """

    family = "tabulated"

    def __init__(self, grid, values):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ConstructionError("grid and values must be 1-d arrays of equal length")
        if grid.size < 8:
            raise ConstructionError("a tabulated density needs at least 8 grid points")
        if not (np.isfinite(grid).all() and np.isfinite(values).all()):
            raise ConstructionError("grid and values must be finite")
        if not (np.diff(grid) > 0).all():
            raise ConstructionError("grid must be strictly ascending")
        if (values < 0).any():
            raise ConstructionError("density values must be nonnegative")
        if not (values[1:-1] > 0).all():
            raise ConstructionError("density values must be positive on the interior")
        interp = PchipInterpolator(grid, values, extrapolate=False)
        mass = float(interp.integrate(grid[0], grid[-1]))
        self._pdf_poly = PchipInterpolator(grid, values / mass, extrapolate=False)
        self._cdf_poly = self._pdf_poly.antiderivative()
        # x * p(x) is a piecewise quintic: tabulate its integral per cell exactly
        t, w = gauss_legendre_unit(4)
        h = np.diff(grid)
        y = grid[:-1, None] + h[:, None] * t
        cells = (h[:, None] * w * y * self._pdf_poly(y)).sum(axis=1)
        self._moment_nodes = np.concatenate([[0.0], np.cumsum(cells)])
        self.grid = grid
        self.values = values / mass
        m = float(self._moment_nodes[-1])
        second = float((h[:, None] * w * y * y * self._pdf_poly(y)).sum())
        # inverse-cdf seed table
        fine = np.linspace(0.0, 1.0, 17)[:-1]
        self._inv_x = np.concatenate(
            [(grid[:-1, None] + h[:, None] * fine).ravel(), grid[-1:]])
        self._inv_c = np.maximum.accumulate(self._cdf_poly(self._inv_x))
        super().__init__(SupportInterval(grid[0], grid[-1]),
                         dict(points=grid.size), m, second - m * m,
                         breakpoints=grid[1:-1] if grid.size <= 4096 else ())

    def _logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(self._pdf_poly(x), 0.0))

    def _cdf(self, x):
        return np.clip(self._cdf_poly(x), 0.0, 1.0)

    def _sf(self, x):
        return np.clip(1.0 - self._cdf_poly(x), 0.0, 1.0)

    def _partial_first_moment(self, x):
        k = np.clip(np.searchsorted(self.grid, x, side="right") - 1, 0, self.grid.size - 2)
        t, w = gauss_legendre_unit(4)
        lo = self.grid[k][:, None]
        y = lo + (x[:, None] - lo) * t
        local = ((x[:, None] - lo) * w * y * self._pdf_poly(y)).sum(axis=1)
        return self._moment_nodes[k] + local

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        x = np.interp(q, self._inv_c, self._inv_x)
        lo, hi = self.grid[0], self.grid[-1]
        for _ in range(4):
            p = self._pdf_poly(x)
            step = np.where(p > 0, (self._cdf_poly(x) - q) / np.where(p > 0, p, 1.0), 0.0)
            x = np.clip(x - step, lo, hi)
        return x


def make_tabulated(grid, values) -> TabulatedDensity:
    """Density from grid samples; see :class:`TabulatedDensity`."""
    return TabulatedDensity(grid, values)


def load_tabulated_csv(path) -> TabulatedDensity:
    """Read a two-column ``x, p(x)`` CSV (header row optional)."""
    xs, ps = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                x, p = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 0:
                    continue  # header
                raise ConstructionError(f"{path}: bad row {i + 1}: {row!r}") from None
            xs.append(x)
            ps.append(p)
    return make_tabulated(xs, ps)


def eval_pdf_cdf(density: TargetDensity, x):
    """Return ``(pdf(x), cdf(x))``."""
    return density.pdf(x), density.cdf(x)


def partial_first_moment(density: TargetDensity, x):
    """``int_l^x y p(y) dy``."""
    return density.partial_first_moment(x)
