"""Drift and squared diffusion coefficient of the ergodic diffusion whose
invariant law is a given density.

For a drift ``b`` that is positive left of a point ``k`` and negative right
of it, and integrates to zero against ``p``, the coefficient

    a(x) = 2 / p(x) * int_l^x b(y) p(y) dy

makes ``dX = b(X) dt + sqrt(a(X)) dW`` ergodic with invariant density ``p``.
The quantity ``flux(x) = int_l^x b p = a(x) p(x) / 2`` is what the Stein
solver needs, so models expose it directly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import _kernels as K
from .densities import TargetDensity, make_family
from .errors import CenteringError, ConstructionError, DomainError
from .quadrature import CumulativeTable, density_grid, quad

CENTERING_TOL = 1e-8
CHECK_POINTS = 512
LIMIT_LEVELS = 10.0 ** -np.arange(6.0, 12.01, 1.0)


def interior_grid(density: TargetDensity, n: int = CHECK_POINTS) -> np.ndarray:
    """``n`` equal-probability interior points."""
    return density.ppf((np.arange(n) + 0.5) / n)


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``b`` with sign change at ``k``.

    ``slope``/``intercept`` are set when ``b`` is affine, which lets the
    simulator use the compiled kernel without tabulating ``b``.
    """

    b: object
    k: float
    slope: float | None = None
    intercept: float | None = None
    label: str = "custom"

    @classmethod
    def linear(cls, m: float) -> "DriftSpec":
        """Mean-reverting drift ``-(x - m)``."""
        m = float(m)
        return cls(lambda x: m - np.asarray(x, dtype=float), m, -1.0, m, "linear")

    @classmethod
    def from_callable(cls, b, density: TargetDensity, label="custom") -> "DriftSpec":
        """Locate the sign change of ``b`` on the density's bulk and wrap it."""
        xs = interior_grid(density)
        vals = np.asarray(b(xs), dtype=float)
        flips = np.flatnonzero((vals[:-1] > 0) & (vals[1:] <= 0))
        if flips.size != 1:
            raise ConstructionError("drift must change sign exactly once, from + to -")
        i = flips[0]
        k = optimize.brentq(lambda t: float(b(np.float64(t))), xs[i], xs[i + 1],
                            xtol=1e-14)
        return cls(b, k, label=label)

    def __call__(self, x):
        return np.asarray(self.b(np.asarray(x, dtype=float)), dtype=float)

    @property
    def is_affine(self) -> bool:
        return self.slope is not None


class DiffusionModel:
    """Coefficients ``(a, b)`` on the support of ``density``.

    Attributes
    ----------
    density : TargetDensity
    drift : DriftSpec
    a_kind : {"closed-form", "numeric"}
    grid : QuadratureGrid
        Quantile-spaced grid reused by the Stein solver.
    """

    def __init__(self, density: TargetDensity, drift: DriftSpec, a_kind: str,
                 a_fun, flux_fun, grid, kernel_code: int, kernel_params=(),
                 flux_table: CumulativeTable | None = None):
        self.density = density
        self.drift = drift
        self.a_kind = a_kind
        self._a = a_fun
        self._flux = flux_fun
        self.grid = grid
        self.flux_table = flux_table
        self.kernel_code = kernel_code
        self.kernel_params = np.asarray(kernel_params, dtype=float)
        if kernel_code == K.A_TABLE:
            nodes = grid.nodes
            self.kernel_table = (np.concatenate([[density.support.lower], nodes,
                                                 [density.support.upper]]),
                                 np.concatenate([[0.0], self.a(nodes), [0.0]]))
            if not np.isfinite(self.kernel_table[0]).all():
                keep = np.isfinite(self.kernel_table[0])
                self.kernel_table = tuple(t[keep] for t in self.kernel_table)
        else:
            self.kernel_table = (np.zeros(2), np.zeros(2))
        self._norm_cache: dict = {}

    @property
    def support(self):
        return self.density.support

    def a(self, x) -> np.ndarray:
        """Squared diffusion coefficient; zero outside the open support."""
        x = np.asarray(x, dtype=float)
        inside = self.support.contains(x)
        out = np.zeros(x.shape)
        if inside.any():
            out[inside] = self._a(x[inside])
        return out

    def b(self, x) -> np.ndarray:
        return self.drift(x)

    def flux(self, x) -> np.ndarray:
        """``int_l^x b p``, equal to ``a p / 2``."""
        x = np.asarray(x, dtype=float)
        inside = self.support.contains(x)
        out = np.zeros(x.shape)
        if inside.any():
            out[inside] = self._flux(x[inside])
        return out

    def sigma(self, x) -> np.ndarray:
        return np.sqrt(np.maximum(self.a(x), 0.0))

    def __repr__(self):
        return f"DiffusionModel({self.density!r}, drift={self.drift.label}, a={self.a_kind})"


def _drift_for(density: TargetDensity, drift: DriftSpec | None) -> DriftSpec:
    if drift is None:
        return DriftSpec.linear(density.mean)
    return drift


def _check_drift(density: TargetDensity, drift: DriftSpec, table: CumulativeTable):
    lo, hi = density.support.lower, density.support.upper
    if not lo < drift.k < hi:
        raise ConstructionError(f"drift sign-change point {drift.k} is outside {density.support}")
    if abs(table.total) > CENTERING_TOL:
        raise CenteringError(f"drift integrates to {table.total:.3e} against the density, "
                             f"tolerance {CENTERING_TOL:g}")


def build_coefficient_numeric(density: TargetDensity,
                              drift: DriftSpec | None = None) -> DiffusionModel:
    """Diffusion coefficient from quadrature of ``b p``.

    The flux ``int_l^x b p`` is tabulated on a quantile grid; below the sign
    change of ``b`` it is read as a prefix integral, above it as minus the
    suffix integral so that neither tail loses relative accuracy.
    ``a = 2 flux / p`` is formed in log space.
    """
    drift = _drift_for(density, drift)
    grid = density_grid(density, extra=(drift.k,))
    integrand = lambda y: drift(y) * density.pdf(y)  # noqa: E731
    table = CumulativeTable(grid, integrand)
    _check_drift(density, drift, table)
    k = drift.k

    def flux(x):
        return table.split(x, k)

    def a_num(x):
        j = flux(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 2.0 * np.sign(j) * np.exp(np.log(np.abs(j)) - density.logpdf(x))

    xs = interior_grid(density)
    if not (a_num(xs) > 0).all():
        raise ConstructionError("numeric coefficient is not positive on the interior grid")
    return DiffusionModel(density, drift, "numeric", a_num, flux, grid, K.A_TABLE,
                          flux_table=table)


def _closed_forms(density: TargetDensity):
    """``(a, flux, kernel_code, kernel_params)`` for the linear drift."""
    fam, p = density.family, density.params
    pdf = density.pdf
    if fam == "normal":
        c = 2.0 * p["sigma"] ** 2
        return (lambda x: np.full(np.shape(x), c), lambda x: 0.5 * c * pdf(x),
                K.A_CONST, (c,))
    if fam == "gamma":
        lam = p["rate"]
        return (lambda x: 2.0 * x / lam, lambda x: x * pdf(x) / lam, K.A_LINEAR,
                (2.0 / lam, 0.0))
    if fam == "uniform":
        lo, hi = p["lo"], p["hi"]
        a = lambda x: (x - lo) * (hi - x)  # noqa: E731
        return a, lambda x: 0.5 * a(x) * pdf(x), K.A_INTERVAL, (1.0, lo, hi)
    if fam == "beta":
        c = 2.0 / (p["alpha"] + p["beta"])
        a = lambda x: c * x * (1.0 - x)  # noqa: E731
        return a, lambda x: 0.5 * a(x) * pdf(x), K.A_INTERVAL, (c, 0.0, 1.0)
    if fam == "lognormal":
        d, s, m = p["delta"], p["sigma"], density.mean

        def a(x):
            z = (np.log(x) - d) / s
            return 2.0 * m * x * s * K.lognormal_gap_ratio_np(z, s)

        def flux(x):
            z = (np.log(x) - d) / s
            gap = np.where(z <= 0.5 * s, special.ndtr(z) - special.ndtr(z - s),
                           special.ndtr(s - z) - special.ndtr(-z))
            return m * gap

        return a, flux, K.A_LOGNORMAL, (m, d, s)
    if fam == "pareto":
        c = 2.0 / (p["alpha"] - 1.0)
        a = lambda x: c * x * (1.0 + x)  # noqa: E731
        return a, lambda x: 0.5 * a(x) * pdf(x), K.A_PARETO, (c,)
    if fam == "laplace":
        al = p["alpha"]
        a = lambda x: 2.0 / al**2 * (1.0 + al * np.abs(x))  # noqa: E731
        return a, lambda x: 0.5 * a(x) * pdf(x), K.A_LAPLACE, (2.0 / al**2, al)
    raise ConstructionError(f"no closed-form coefficient for family {fam!r}; "
                            "use build_coefficient_numeric")


def closed_form_coefficient(family, params: dict | None = None) -> DiffusionModel:
    """Model with the analytic ``a`` for a built-in family and drift ``-(x - m)``.

    ``family`` may be a family name (with ``params``) or a built-in
    :class:`TargetDensity`.
    """
    density = family if isinstance(family, TargetDensity) else make_family(family, params)
    a, flux, code, kp = _closed_forms(density)
    drift = DriftSpec.linear(density.mean)
    grid = density_grid(density, extra=(drift.k,))
    return DiffusionModel(density, drift, "closed-form", a, flux, grid, code, kp)


def model_for(family, params=None, numeric: bool = False) -> DiffusionModel:
    """Closed-form model when available, otherwise numeric."""
    density = family if isinstance(family, TargetDensity) else make_family(family, params)
    if numeric or density.family == "tabulated":
        return build_coefficient_numeric(density)
    return closed_form_coefficient(density)


# ------------------------------------------------------------------ validation

@dataclass
class EndLimit:
    """Behaviour of a ratio as ``x`` approaches one end of the support."""

    quantity: str
    values: tuple
    limit: float
    converged: bool

    @property
    def positive(self) -> bool:
        return self.limit > 0


def end_limit(model: DiffusionModel, side: str) -> EndLimit:
    """Estimate ``liminf a/(u-x)`` (finite end) or ``liminf a`` (infinite end).

    The ratio is sampled at tail quantile levels ``1e-6 .. 1e-12``.  When the
    last two samples agree to 1e-3 relative the last one is taken as the
    limit; a sequence that is still decreasing is reported as limit 0.
    """
    d = model.density
    if side == "lower":
        xs, end = d.ppf(LIMIT_LEVELS), d.support.lower
        finite = d.support.finite_lower
        dist = xs - end
    else:
        xs, end = d.isf(LIMIT_LEVELS), d.support.upper
        finite = d.support.finite_upper
        dist = end - xs
    a = model.a(xs)
    vals = a / dist if finite else a
    qty = ("a/(x-l)" if side == "lower" else "a/(u-x)") if finite else "a"
    last, prev = vals[-1], vals[-2]
    converged = abs(last - prev) <= 1e-3 * max(abs(last), 1e-300)
    if converged:
        limit = float(last)
    elif np.all(np.diff(vals) < 0):
        limit = 0.0
    else:
        limit = float(vals.min())
    return EndLimit(qty, tuple(float(v) for v in vals), limit, converged)


def _monotone_near_ends(model: DiffusionModel, fraction=0.05, n=64):
    """Is ``b`` non-increasing on the outer ``fraction`` of probability mass?"""
    d = model.density
    out = {}
    for side, levels in (("lower", np.geomspace(1e-12, fraction, n)),
                         ("upper", 1.0 - np.geomspace(fraction, 1e-12, n))):
        xs = d.ppf(levels) if side == "lower" else d.isf(1.0 - levels)
        xs = np.unique(xs[np.isfinite(xs) & d.support.contains(xs)])
        bv = model.b(xs)
        out[side] = bool(np.all(np.diff(bv) <= 1e-12 * (1 + np.abs(bv[1:]))))
    return out


def _lipschitz_near_ends(model: DiffusionModel, fraction=0.05, n=64):
    d = model.density
    out = {}
    for side in ("lower", "upper"):
        finite = d.support.finite_lower if side == "lower" else d.support.finite_upper
        if not finite:
            out[side] = True
            continue
        lv = np.geomspace(1e-12, fraction, n)
        xs = np.unique(d.ppf(lv) if side == "lower" else d.isf(lv))
        xs = xs[d.support.contains(xs)]
        slopes = np.abs(np.diff(model.b(xs)) / np.diff(xs))
        out[side] = bool(np.isfinite(slopes).all() and slopes.max() < 1e8)
    return out


def _expected_a(model: DiffusionModel, level: float) -> float:
    d = model.density
    lo, hi = float(d.ppf(level)), float(d.isf(level))
    g = model.grid.restrict(lo, hi)
    return CumulativeTable(g, lambda y: 2.0 * model.flux(y)).total


@dataclass
class ValidationReport:
    """Checks on a constructed model; flags rather than exceptions."""

    min_a: float
    expected_a: float
    expected_a_finite: bool
    centering: float
    drift_sign_ok: bool
    b_nonincreasing_ends: dict
    b_lipschitz_ends: dict
    end_limits: dict
    inf_a: float
    messages: list = field(default_factory=list)

    @property
    def positive_a(self) -> bool:
        return self.min_a > 0

    @property
    def bounded_solution_hypotheses(self) -> bool:
        """``b`` non-increasing near both ends."""
        return all(self.b_nonincreasing_ends.values())

    @property
    def derivative_hypotheses(self) -> bool:
        """Monotone, Lipschitz ``b`` near finite ends and positive end limits."""
        return (all(self.b_nonincreasing_ends.values())
                and all(self.b_lipschitz_ends.values())
                and all(e.positive for e in self.end_limits.values()))

    @property
    def passed(self) -> bool:
        return self.positive_a and self.drift_sign_ok and abs(self.centering) <= CENTERING_TOL

    def as_dict(self) -> dict:
        out = {
            "min_a": self.min_a, "expected_a": self.expected_a,
            "expected_a_finite": self.expected_a_finite, "centering": self.centering,
            "drift_sign_ok": self.drift_sign_ok, "inf_a": self.inf_a,
            "bounded_solution_hypotheses": self.bounded_solution_hypotheses,
            "derivative_hypotheses": self.derivative_hypotheses, "passed": self.passed,
        }
        for side, lim in self.end_limits.items():
            out[f"limit_{side}_quantity"] = lim.quantity
            out[f"limit_{side}"] = lim.limit
            out[f"limit_{side}_converged"] = lim.converged
        for side, ok in self.b_nonincreasing_ends.items():
            out[f"b_nonincreasing_{side}"] = ok
        return out


def validate_model(model: DiffusionModel) -> ValidationReport:
    """Positivity, integrability and the end-behaviour hypotheses of a model."""
    d = model.density
    xs = interior_grid(d)
    a = model.a(xs)
    bv = model.b(xs)
    k = model.drift.k
    sign_ok = bool(np.all(bv[xs < k] > 0) and np.all(bv[xs > k] < 0))
    msgs = []
    if model.flux_table is not None:
        centering = model.flux_table.total
    else:
        centering = quad(lambda y: model.b(y) * d.pdf(y), d.support.lower,
                         d.support.upper, d.breakpoints + (k,))
    ea10, ea12 = _expected_a(model, 1e-10), _expected_a(model, 1e-12)
    finite = bool(np.isfinite(ea12) and abs(ea12 - ea10) <= 1e-3 * abs(ea12))
    if not finite:
        msgs.append(f"E a(X) does not settle under truncation ({ea10:.6g} -> {ea12:.6g})")
    limits = {s: end_limit(model, s) for s in ("lower", "upper")}
    if d.support.finite_lower or d.support.finite_upper:
        inf_a = 0.0
    else:
        extra = model.a(np.array(d.breakpoints + (k,)))
        inf_a = float(min(a.min(), extra.min(), limits["lower"].limit,
                          limits["upper"].limit))
    if a.min() <= 0:
        msgs.append("a is not positive on the interior grid")
    if not sign_ok:
        msgs.append("drift sign pattern violated")
    for side, lim in limits.items():
        if not lim.positive:
            msgs.append(f"liminf {lim.quantity} at the {side} end is 0")
    return ValidationReport(float(a.min()), float(ea12), finite, float(centering), sign_ok,
                            _monotone_near_ends(model), _lipschitz_near_ends(model),
                            limits, inf_a, msgs)


# --------------------------------------------------------------- reconstruction

class Reconstruction:
    """Density rebuilt from ``(a, b)`` through one anchor value.

    Evaluates ``p(c) a(c) / a(x) * exp(int_c^x 2b/a)``.  The exponent is
    tabulated between the 1e-6 and 1-1e-6 quantiles (``valid_range``);
    outside it adaptive quadrature is tried and ``nan`` is returned if it
    fails, so callers can tell the result is range limited.
    """

    def __init__(self, model: DiffusionModel, c: float, p_c: float):
        d = model.density
        if not d.support.contains(c):
            raise DomainError(f"anchor {c} must lie strictly inside {d.support}")
        if not p_c > 0:
            raise DomainError("anchor density value must be positive")
        self.model, self.c, self.p_c = model, float(c), float(p_c)
        self.a_c = float(model.a(c))
        lo, hi = float(d.ppf(1e-6)), float(d.isf(1e-6))
        self.valid_range = (lo, hi)
        grid = model.grid.restrict(lo, hi).with_breakpoints([c])
        ratio = lambda y: 2.0 * model.b(y) / model.a(y)  # noqa: E731
        self._table = CumulativeTable(grid, ratio)
        self._at_c = float(self._table.lower(c))
        self._ratio = ratio
        self.range_limited = False

    def exponent(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        lo, hi = self.valid_range
        inside = (flat >= lo) & (flat <= hi)
        out = np.full(flat.shape, np.nan)
        if inside.any():
            out[inside] = self._table.lower(flat[inside]) - self._at_c
        for i in np.flatnonzero(~inside):
            xv = float(flat[i])
            if not self.model.support.contains(xv):
                continue
            val = quad(self._ratio, self.c, xv, self.model.density.breakpoints)
            if np.isfinite(val):
                out[i] = val
            else:
                self.range_limited = True
        return out.reshape(x.shape)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        val = self.p_c * self.a_c / self.model.a(x) * np.exp(self.exponent(x))
        return np.where(x == self.c, self.p_c, val)


def reconstruct_density(model: DiffusionModel, c: float, p_c: float) -> Reconstruction:
    return Reconstruction(model, c, p_c)


def export_model_csv(model: DiffusionModel, path) -> None:
    """Write ``x, a(x), b(x), p(x)`` on the model grid."""
    x = model.grid.nodes
    rows = np.column_stack([x, model.a(x), model.b(x), model.density.pdf(x)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "a", "b", "p"])
        for r in rows:
            w.writerow([f"{v:.17g}" for v in r])


def family_model(name: str) -> DiffusionModel:
    """Closed-form model for the worked-example parameterisations.

    ``name`` is a family tag or ``"chi_square"``.
    """
    return closed_form_coefficient(make_family(name))


__all__ = [
    "DriftSpec", "DiffusionModel", "ValidationReport", "EndLimit", "Reconstruction",
    "build_coefficient_numeric", "closed_form_coefficient", "model_for",
    "validate_model", "reconstruct_density", "export_model_csv", "family_model",
    "interior_grid", "end_limit",
]
