"""Solution of the Stein equation ``f - m_f = a g'/2 + b g`` for a model.

With ``flux = int_l^x b p = a p / 2`` the bounded solution is

    g(x) = int_l^x (f - m_f) p / flux(x)

which is evaluated from a prefix integral left of the median and from the
(negated) suffix integral right of it.  The derivative follows from the
equation itself; an independent finite-difference residual checks both.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .densities import TargetDensity
from .diffusion import DiffusionModel, validate_model
from .errors import BoundaryError, HypothesisError, SingularityError, SteinDiffError
from .quadrature import TAIL_LEVELS, CumulativeTable, density_grid

SOLUTION_LEVELS = 2048
LIBRARY_SIZE = 16
RAMP_WIDTH_FRACTION = 1e-3
FD_REL_STEP = 1e-4
NORM_A_FLOOR = 1e-6


# ---------------------------------------------------------------- test functions

def _smooth_step(s):
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    inner = (s > 0) & (s < 1)
    si = np.where(inner, s, 0.5)
    with np.errstate(over="ignore"):
        # e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)}) written as a logistic
        val = 1.0 / (1.0 + np.exp(1.0 / si - 1.0 / (1.0 - si)))
    return np.where(inner, val, np.where(s >= 1, 1.0, 0.0))


def _smooth_step_prime(s):
    s = np.asarray(s, dtype=float)
    inner = (s > 0) & (s < 1)
    si = np.where(inner, s, 0.5)
    psi = _smooth_step(si)
    return np.where(inner, psi * (1 - psi) * (1 / si**2 + 1 / (1 - si) ** 2), 0.0)


def _bump(t):
    t = np.asarray(t, dtype=float)
    inner = np.abs(t) < 1
    ti = np.where(inner, t, 0.0)
    return np.where(inner, np.exp(1.0 - 1.0 / (1.0 - ti * ti)), 0.0)


def _bump_prime(t):
    t = np.asarray(t, dtype=float)
    inner = np.abs(t) < 1
    ti = np.where(inner, t, 0.0)
    return np.where(inner, _bump(ti) * (-2.0 * ti / (1.0 - ti * ti) ** 2), 0.0)


_T = np.linspace(-1, 1, 200001)
BUMP_LIP = float(np.abs(_bump_prime(_T)).max())
STEP_LIP = float(np.abs(_smooth_step_prime((_T + 1) / 2)).max())


class TestFunction:
    """A test function with the norms the Stein bounds are stated in.

    Attributes
    ----------
    kind : {"C0", "C0_1", "indicator_smoothed"}
    sup_norm, lip_norm : float
        ``lip_norm`` is ``None`` when no derivative bound is known.
    width : float or None
        Length scale of the sharpest feature; finite-difference checks keep
        their step well below it.
    breakpoints : tuple
        Points where quadrature pieces should start, to resolve the feature.
    constant : float or None
        Set for constant functions so that their mean is exact.
    """

    __test__ = False  # not a pytest class

    def __init__(self, f, kind="C0", sup_norm=math.inf, lip_norm=None, derivative=None,
                 label="f", width=None, breakpoints=(), constant=None):
        if kind not in ("C0", "C0_1", "indicator_smoothed"):
            raise ValueError(f"unknown test-function class {kind!r}")
        if kind == "C0_1" and lip_norm is None:
            raise ValueError("a C0_1 test function needs a Lipschitz norm")
        self._f = f
        self.kind = kind
        self.sup_norm = float(sup_norm)
        self.lip_norm = None if lip_norm is None else float(lip_norm)
        self._df = derivative
        self.label = label
        self.width = width
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.constant = constant

    def __call__(self, x):
        return np.asarray(self._f(np.asarray(x, dtype=float)), dtype=float)

    def derivative(self, x):
        if self._df is None:
            raise NotImplementedError(f"{self.label} has no analytic derivative")
        return np.asarray(self._df(np.asarray(x, dtype=float)), dtype=float)

    def scaled(self, c: float) -> "TestFunction":
        """``c * f`` with norms scaled accordingly."""
        df = None if self._df is None else (lambda x: c * self._df(x))
        return TestFunction(lambda x: c * self._f(x), self.kind, abs(c) * self.sup_norm,
                            None if self.lip_norm is None else abs(c) * self.lip_norm, df,
                            f"{c:g}*{self.label}", self.width, self.breakpoints,
                            None if self.constant is None else c * self.constant)

    def __repr__(self):
        return f"TestFunction({self.label}, {self.kind})"

    # constructors -------------------------------------------------
    @classmethod
    def const(cls, c: float) -> "TestFunction":
        c = float(c)
        return cls(lambda x: np.full(np.shape(x), c), "C0_1", abs(c), 0.0,
                   lambda x: np.zeros(np.shape(x)), f"const({c:g})", constant=c)

    @classmethod
    def identity(cls) -> "TestFunction":
        """``f(x) = x``; unbounded, so only usable where the solution stays finite."""
        return cls(lambda x: x, "C0", math.inf, 1.0, lambda x: np.ones(np.shape(x)), "x")

    @classmethod
    def bump(cls, center: float, radius: float, height: float = 1.0) -> "TestFunction":
        """Smooth bump of the given height supported on ``center +- radius``."""
        c, r, h = float(center), float(radius), float(height)
        return cls(lambda x: h * _bump((x - c) / r), "C0_1", abs(h), abs(h) * BUMP_LIP / r,
                   lambda x: h / r * _bump_prime((x - c) / r),
                   f"bump({c:.6g},{r:.3g})", width=r,
                   breakpoints=tuple(c + r * np.linspace(-1, 1, 9)))

    @classmethod
    def smoothed_indicator(cls, z: float, width: float) -> "TestFunction":
        """Smooth non-increasing ramp from 1 (left of ``z - width``) to 0 (right of ``z``)."""
        z, w = float(z), float(width)
        return cls(lambda x: 1.0 - _smooth_step((x - (z - w)) / w), "indicator_smoothed",
                   1.0, STEP_LIP / w,
                   lambda x: -_smooth_step_prime((x - (z - w)) / w) / w,
                   f"ramp({z:.6g},{w:.3g})", width=w,
                   breakpoints=tuple(z - w + w * np.linspace(0, 1, 9)))

    @classmethod
    def from_callable(cls, f, density: TargetDensity, kind="C0", label="f",
                      lip_norm=None, derivative=None) -> "TestFunction":
        """Wrap ``f`` with its sup norm measured on a 2048-point quantile grid."""
        xs = density.ppf((np.arange(2048) + 0.5) / 2048)
        sup = float(np.abs(f(xs)).max())
        return cls(f, kind, sup, lip_norm, derivative, label)


def test_function_library(density: TargetDensity) -> list[TestFunction]:
    """16 smooth bumps and 16 smoothed indicators placed at quantiles."""
    q = (np.arange(LIBRARY_SIZE) + 0.5) / LIBRARY_SIZE
    centers = density.ppf(q)
    lo, hi = density.support.lower, density.support.upper
    out = []
    for i, c in enumerate(centers):
        gaps = [centers[j] - centers[j - 1] for j in (i, i + 1) if 0 < j < LIBRARY_SIZE]
        r = max(gaps)
        r = min(r, 0.99 * (c - lo), 0.99 * (hi - c))
        out.append(TestFunction.bump(c, r))
    w = RAMP_WIDTH_FRACTION * density.quantile_spread()
    out.extend(TestFunction.smoothed_indicator(z, w) for z in centers)
    return out


test_function_library.__test__ = False


def named_test_function(name: str, density: TargetDensity) -> TestFunction:
    """Test functions addressable by name from the command line.

    ``ramp`` and ``bump`` sit at the median; ``identity`` is ``f(x) = x``;
    ``const`` is the constant 1.
    """
    med = density.median
    if name == "ramp":
        return TestFunction.smoothed_indicator(med, RAMP_WIDTH_FRACTION * density.quantile_spread())
    if name == "bump":
        r = 0.25 * density.quantile_spread()
        r = min(r, 0.99 * (med - density.support.lower), 0.99 * (density.support.upper - med))
        return TestFunction.bump(med, r)
    if name in ("identity", "x"):
        return TestFunction.identity()
    if name == "const":
        return TestFunction.const(1.0)
    raise ValueError(f"unknown test function {name!r}; choose ramp, bump, identity, const")


# ---------------------------------------------------------------- solver

def _grid_for(model: DiffusionModel, f: TestFunction):
    return model.grid.with_breakpoints(f.breakpoints) if f.breakpoints else model.grid


def mean_of(f: TestFunction, density: TargetDensity, grid=None) -> float:
    """``int f p`` by the piecewise quadrature table."""
    if f.constant is not None:
        return float(f.constant)
    if grid is None:
        grid = density_grid(density, extra=f.breakpoints)
    total = CumulativeTable(grid, lambda y: f(y) * density.pdf(y)).total
    if not math.isfinite(total):
        raise SteinDiffError(f"mean of {f.label} did not converge")
    return float(total)


def solution_grid(density: TargetDensity, n: int = SOLUTION_LEVELS) -> np.ndarray:
    """Quantile-spaced evaluation points, bulk plus half-decade tails to 1e-11.

    The tails stop one decade short of the quadrature grid so every point
    is read from the tabulated integrals.
    """
    levels = (np.arange(n) + 0.5) / n
    tails = TAIL_LEVELS[TAIL_LEVELS >= 1e-11]
    xs = np.concatenate([density.ppf(tails), density.ppf(levels),
                         density.isf(tails[::-1])])
    xs = xs[density.support.contains(xs)]
    return np.unique(xs)


class SteinSolution:
    """Bounded solution ``g`` of the Stein equation for one test function.

    Attributes
    ----------
    grid : ndarray
        Quantile-spaced points where ``g`` and ``g_prime`` are stored.
    g, g_prime : ndarray
    m_f : float
    norms : dict
        ``sup_g``, ``sup_a_gprime``, ``sup_gprime`` over ``grid``.  The last
        skips points where ``a`` is below ``1e-6 a(median)``, since there the
        derivative is rounding noise divided by ``a``.
    representation_gap : float
        Difference of the prefix and suffix forms of ``g`` at the median.
    mean_zero_error : float
        ``int (f - m_f) p`` as integrated, ideally 0.
    """

    def __init__(self, model: DiffusionModel, f: TestFunction, m_f: float,
                 table: CumulativeTable | None, grid=None):
        self.model = model
        self.f = f
        self.m_f = m_f
        self._table = table
        self.median = model.density.median
        if table is None:
            self.mean_zero_error = 0.0
            self.representation_gap = 0.0
        else:
            self.mean_zero_error = float(table.total)
            jm = float(model.flux(self.median))
            lower = float(table.lower(self.median))
            upper = float(table.upper(self.median))
            self.representation_gap = abs(lower + upper) / abs(jm)
        self.grid = solution_grid(model.density) if grid is None else np.asarray(grid)
        self.g = self(self.grid)
        self.g_prime = self.derivative(self.grid)
        a = model.a(self.grid)
        # where a is tiny, g' = 2(f - m_f - b g)/a divides rounding noise by a
        ok = a >= NORM_A_FLOOR * float(model.a(self.median))
        self.norms = {
            "sup_g": float(np.abs(self.g).max()),
            "sup_a_gprime": float(np.abs(a * self.g_prime).max()),
            "sup_gprime": float(np.abs(self.g_prime[ok]).max()),
        }

    def integral(self, x) -> np.ndarray:
        """``int_l^x (f - m_f) p`` via the median-switched forms."""
        x = np.asarray(x, dtype=float)
        if self._table is None:
            return np.zeros(x.shape)
        return self._table.split(x, self.median)

    def __call__(self, x) -> np.ndarray:
        """``g`` at interior points."""
        x = np.asarray(x, dtype=float)
        if self._table is None:
            return np.zeros(x.shape)
        j = self.model.flux(x)
        if np.any(j == 0):
            raise SingularityError("flux vanishes at an evaluation point")
        return self.integral(x) / j

    def derivative(self, x) -> np.ndarray:
        """``g'`` from the equation: ``2 (f - m_f - b g) / a``."""
        x = np.asarray(x, dtype=float)
        a = self.model.a(x)
        if np.any(a <= 0):
            bad = x[np.asarray(a <= 0)] if x.ndim else x
            raise SingularityError(f"a vanishes at {np.atleast_1d(bad)[:3]}")
        return 2.0 * (self.f(x) - self.m_f - self.model.b(x) * self(x)) / a


def solve(f: TestFunction, model: DiffusionModel, grid=None) -> SteinSolution:
    """Solve the Stein equation for ``f`` under ``model``."""
    qgrid = _grid_for(model, f)
    m_f = mean_of(f, model.density, qgrid)
    d = model.density
    if f.constant is not None:
        return SteinSolution(model, f, m_f, None, grid)
    table = CumulativeTable(qgrid, lambda y: (f(y) - m_f) * d.pdf(y))
    return SteinSolution(model, f, m_f, table, grid)


def derivative_via_identity(solution: SteinSolution, model: DiffusionModel,
                            f: TestFunction, x) -> np.ndarray:
    """``g'(x) = 2 (f(x) - m_f - b(x) g(x)) / a(x)`` at interior ``x``."""
    x = np.asarray(x, dtype=float)
    if not np.all(model.support.contains(x)):
        raise BoundaryError(f"x must lie strictly inside {model.support}")
    return 2.0 * (f(x) - solution.m_f - model.b(x) * solution(x)) / model.a(x)


# ---------------------------------------------------------------- residual

_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FORWARD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


def fd_steps(model: DiffusionModel, f: TestFunction, x) -> np.ndarray:
    """Finite-difference step per point.

    ``1e-4`` of a local length scale: the larger of the 1-99% quantile
    spread and the distance from the median, clipped by the distance to a
    finite endpoint.  Where the stencil would reach the test function's
    feature the step is also kept below 1/400 of the feature width.
    """
    d = model.density
    x = np.asarray(x, dtype=float)
    scale = np.maximum(d.quantile_spread(), np.abs(x - d.median))
    if d.support.finite_lower:
        scale = np.minimum(scale, x - d.support.lower)
    if d.support.finite_upper:
        scale = np.minimum(scale, d.support.upper - x)
    h = FD_REL_STEP * scale
    if f.width is not None:
        lo, hi = (min(f.breakpoints), max(f.breakpoints)) if f.breakpoints else (-np.inf, np.inf)
        dist = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        near = dist < 2.0 * h
        h = np.where(near, np.minimum(h, f.width / 400.0), h)
    return h


def fd_derivative(fun, x, h, kinks=()) -> np.ndarray:
    """Fourth-order derivative estimate.

    Central five-point stencil, switched to a one-sided stencil pointing away
    from any kink closer than ``2h``.
    """
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    offsets = np.arange(-2, 3)
    vals = fun(x[..., None] + h[..., None] * offsets)
    out = (vals * _CENTRAL).sum(axis=-1) / h
    for kink in kinks:
        near = np.abs(x - kink) < 2 * h
        if not near.any():
            continue
        xs, hs = x[near], h[near]
        direction = np.where(xs >= kink, 1.0, -1.0)
        steps = direction[:, None] * hs[:, None] * np.arange(5)
        v = fun(xs[:, None] + steps)
        out[near] = (v * _FORWARD).sum(axis=-1) / (direction * hs)
    return out


def residual_profile(solution: SteinSolution, model: DiffusionModel, f: TestFunction,
                     x=None) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ``|f - m_f - a g'/2 - b g|`` with ``g'`` from finite differences."""
    x = solution.grid if x is None else np.asarray(x, dtype=float)
    if solution._table is None:
        return x, np.abs(f(x) - solution.m_f)
    h = fd_steps(model, f, x)
    gp = fd_derivative(solution, x, h, model.density.breakpoints)
    res = f(x) - solution.m_f - 0.5 * model.a(x) * gp - model.b(x) * solution(x)
    return x, np.abs(res)


def residual(solution: SteinSolution, model: DiffusionModel, f: TestFunction, x=None) -> float:
    """Largest Stein-equation residual over the solution grid (or ``x``)."""
    return float(residual_profile(solution, model, f, x)[1].max())


def export_solution_csv(solution: SteinSolution, path) -> None:
    """Write ``x, g, g', residual`` on the solution grid."""
    x, res = residual_profile(solution, solution.model, solution.f)
    g, gp = solution(x), solution.derivative(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "g", "g_prime", "residual"])
        for row in zip(x, g, gp, res):
            w.writerow([f"{v:.17g}" for v in row])


# ---------------------------------------------------------------- norm constants

@dataclass
class NormConstants:
    """Empirical sup-norm ratios over the test-function library.

    ``c1 = max ||g|| / ||f||``, ``c2 = max ||a g'|| / ||f||``,
    ``c4 = max ||g'|| / (||f|| + ||f'||)`` and ``c_gprime = max ||g'|| / ||f||``.
    ``for_bound`` gives the pair ``(C_g', C_g)`` multiplying the two Stein
    terms for the chosen function class.
    """

    function_class: str
    c1: float
    c2: float
    c4: float
    c_gprime: float
    maximizers: dict = field(default_factory=dict)
    note: str = ""

    @property
    def for_bound(self) -> tuple[float, float]:
        if self.function_class == "kolmogorov":
            return self.c_gprime, self.c1
        if self.function_class == "smooth":
            return self.c4, self.c1
        return 1.0, 1.0


def _library_ratios(model: DiffusionModel):
    best = {"c1": (0.0, ""), "c2": (0.0, ""), "c4": (0.0, ""), "c_gprime": (0.0, "")}
    for f in test_function_library(model.density):
        sol = solve(f, model)
        n = sol.norms
        ratios = {
            "c1": n["sup_g"] / f.sup_norm,
            "c2": n["sup_a_gprime"] / f.sup_norm,
            "c4": n["sup_gprime"] / (f.sup_norm + f.lip_norm),
            "c_gprime": n["sup_gprime"] / f.sup_norm,
        }
        for key, v in ratios.items():
            if v > best[key][0]:
                best[key] = (v, f.label)
    return best


def estimate_norm_constants(model: DiffusionModel, function_class: str = "auto") -> NormConstants:
    """Norm constants for the Stein bounds.

    ``function_class`` is ``"kolmogorov"`` (bounded test functions; needs
    ``b`` non-increasing near both ends and ``inf a > 0``), ``"smooth"``
    (bounded Lipschitz test functions; needs the end-limit hypotheses), or
    ``"auto"``, which takes the first class whose hypotheses hold and falls
    back to unit constants.  Results are cached on the model.
    """
    if function_class in model._norm_cache:
        return model._norm_cache[function_class]
    rep = validate_model(model)
    if function_class == "auto":
        for cls in ("kolmogorov", "smooth"):
            try:
                out = estimate_norm_constants(model, cls)
                break
            except HypothesisError as exc:
                note = str(exc)
        else:
            out = NormConstants("unit", 1.0, 1.0, 1.0, 1.0,
                                note=f"no class hypotheses hold; unit constants ({note})")
        model._norm_cache["auto"] = out
        return out
    if function_class == "kolmogorov":
        if not rep.bounded_solution_hypotheses:
            raise HypothesisError("b is not non-increasing near both ends")
        if not rep.inf_a > 0:
            raise HypothesisError("inf a = 0, so ||g'|| is not controlled for bounded f; "
                                  "use the smooth class (Lipschitz test functions)")
    elif function_class == "smooth":
        if not rep.derivative_hypotheses:
            failed = [f"liminf {e.quantity} at {s} end = 0"
                      for s, e in rep.end_limits.items() if not e.positive]
            failed += [f"b not monotone near {s} end"
                       for s, ok in rep.b_nonincreasing_ends.items() if not ok]
            failed += [f"b not Lipschitz near {s} end"
                       for s, ok in rep.b_lipschitz_ends.items() if not ok]
            raise HypothesisError("; ".join(failed) or "end hypotheses fail")
    else:
        raise ValueError(f"unknown function class {function_class!r}")
    best = _library_ratios(model)
    out = NormConstants(function_class, best["c1"][0], best["c2"][0], best["c4"][0],
                        best["c_gprime"][0], {k: v[1] for k, v in best.items()})
    model._norm_cache[function_class] = out
    return out
