"""Monte Carlo assembly of Stein bounds for ``Y = h(N)`` against a diffusion model.

For ``Y`` with values in the model's support, the distance to the target is
controlled by

    C_g' * E|T| + C_g * |E b(Y)|,   T = a(Y)/2 + <D(-L)^{-1}(b(Y) - E b(Y)), DY>,

and by the sharper variant with ``E|T|`` replaced by ``E|E[T | Y]|``.  The
constants come from :func:`steindiff.stein.estimate_norm_constants`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, stats

from . import streams
from .densities import TargetDensity
from .diffusion import DiffusionModel
from .errors import ResolutionWarning, SupportViolation, UnsupportedMode
from .malliavin import (DEFAULT_BINS, GaussianFunctional, MehlerConfig, composed,
                        conditional_projection, mehler_scalar_product)
from .quadrature import quad, quantile_nodes
from .stein import estimate_norm_constants

BATCHES = 20
REGRESSION_SAMPLES = 100_000


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo budget.

    ``samples`` outer realizations are drawn in ``BATCHES`` equal batches,
    batch ``j`` from the stream ``(seed, OUTER, j)``.  ``inner_samples = 0``
    requests the exact inner expectation.
    """

    samples: int = 100_000
    inner_samples: int = 0
    quad_nodes: int = 64
    seed: int = 0
    bins: int = DEFAULT_BINS
    function_class: str = "auto"

    def __post_init__(self):
        if self.samples < BATCHES:
            raise ValueError(f"samples must be at least {BATCHES}")
        if self.inner_samples < 0 or self.inner_samples == 1:
            raise ValueError("inner_samples must be 0 or at least 2")

    @property
    def mehler(self) -> MehlerConfig:
        method = "inner-mc" if self.inner_samples else "auto"
        return MehlerConfig(self.quad_nodes, self.inner_samples, self.seed, method)


@dataclass
class SteinTerms:
    """Per-realization ingredients, batch-indexed for bootstrapping."""

    y: np.ndarray
    t: np.ndarray
    b: np.ndarray
    batch: np.ndarray
    method: str


def _draw(F: GaussianFunctional, mc: MCConfig):
    sizes = np.full(BATCHES, mc.samples // BATCHES)
    sizes[: mc.samples % BATCHES] += 1
    for j, size in enumerate(sizes):
        yield j, F.sample(int(size), mc.seed, streams.OUTER, j)


def check_support(model: DiffusionModel, y: np.ndarray) -> None:
    inside = model.support.contains(y)
    if not inside.all():
        bad = y[~inside]
        raise SupportViolation(f"{bad.size} sampled values outside {model.support}; "
                               f"first offender {float(bad[0])!r}")


def stein_terms(F: GaussianFunctional, model: DiffusionModel, mc: MCConfig) -> SteinTerms:
    """Draw ``Y`` and evaluate ``T`` and ``b(Y)`` for every realization.

    Affine drifts reuse the scalar product of ``Y`` with itself.  Other drifts
    need ``mc.inner_samples > 0`` and go through the chain rule.
    """
    drift = model.drift
    if not drift.is_affine and mc.inner_samples == 0:
        raise UnsupportedMode("a non-affine drift needs inner Monte Carlo "
                              "(set inner_samples > 0)")
    inner = None if drift.is_affine else composed(F, drift, f"b({F.label})")
    ys, ts, bs, batch = [], [], [], []
    offset = 0
    method = ""
    for j, (N, y) in _draw(F, mc):
        check_support(model, y)
        sp = mehler_scalar_product(F, N, mc.mehler, realization_offset=offset, inner=inner)
        method = sp.method
        dterm = drift.slope * sp.value if drift.is_affine else sp.value
        ys.append(y)
        ts.append(0.5 * model.a(y) + dterm)
        bs.append(model.b(y))
        batch.append(np.full(y.size, j))
        offset += y.size
    return SteinTerms(np.concatenate(ys), np.concatenate(ts), np.concatenate(bs),
                     np.concatenate(batch), method)


@dataclass
class BoundReport:
    """Both Stein terms, their 1-sigma stderrs and the assembled bounds.

    ``bound`` uses ``E|T|``; ``bound_conditional`` uses ``E|E[T|Y]|`` and is
    ``nan`` when the regression was not run.
    """

    functional: str
    model: str
    term1_unconditional: float
    term1_unconditional_stderr: float
    term1_conditional: float
    term1_conditional_stderr: float
    term2: float
    term2_stderr: float
    function_class: str
    c_gprime: float
    c_g: float
    bound: float
    bound_conditional: float
    samples: int
    seed: int
    method: str
    notes: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    FIELDS = ("functional", "model", "term1_unconditional", "term1_unconditional_stderr",
              "term1_conditional", "term1_conditional_stderr", "term2", "term2_stderr",
              "function_class", "c_gprime", "c_g", "bound", "bound_conditional", "samples",
              "seed", "method", "notes")

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.term1_unconditional_stderr, self.term1_conditional_stderr)

    def tower_ok(self) -> bool:
        if math.isnan(self.term1_conditional):
            return True
        return self.term1_conditional <= self.term1_unconditional + 3 * self.combined_stderr

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    def to_kv(self) -> str:
        return "".join(f"{k} = {self._fmt(getattr(self, k))}\n" for k in self.FIELDS)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.FIELDS)

    def to_csv_row(self) -> str:
        return ",".join(self._fmt(getattr(self, k)).replace(",", ";") for k in self.FIELDS)


def _abs_mean(v: np.ndarray) -> tuple[float, float]:
    av = np.abs(v)
    return float(av.mean()), float(av.std(ddof=1) / math.sqrt(av.size))


def _assemble(F, model, mc, terms: SteinTerms, conditional: bool) -> BoundReport:
    nc = estimate_norm_constants(model, mc.function_class)
    c_gp, c_g = nc.for_bound
    t1, t1_se = _abs_mean(terms.t)
    eb = float(terms.b.mean())
    eb_se = float(terms.b.std(ddof=1) / math.sqrt(terms.b.size))
    t1c, t1c_se = math.nan, math.nan
    extra = {}
    if conditional:
        if terms.y.size < REGRESSION_SAMPLES:
            warnings.warn(f"conditional term from {terms.y.size} samples; "
                          f"{REGRESSION_SAMPLES} or more recommended",
                          ResolutionWarning, stacklevel=3)
        proj = conditional_projection(terms.y, terms.t, mc.bins)
        t1c, t1c_se = proj.abs_mean()
        extra["projection"] = proj
    t2 = abs(eb)
    return BoundReport(
        functional=F.label, model=repr(model), term1_unconditional=t1,
        term1_unconditional_stderr=t1_se, term1_conditional=t1c,
        term1_conditional_stderr=t1c_se, term2=t2, term2_stderr=eb_se,
        function_class=nc.function_class, c_gprime=float(c_gp), c_g=float(c_g),
        bound=c_gp * t1 + c_g * t2,
        bound_conditional=c_gp * t1c + c_g * t2 if conditional else math.nan,
        samples=int(terms.y.size), seed=int(mc.seed), method=terms.method, notes=nc.note,
        extra=extra)


def bound_unconditional(F: GaussianFunctional, model: DiffusionModel,
                        mc: MCConfig = MCConfig()) -> BoundReport:
    """Stein bound with the unconditional first term."""
    terms = stein_terms(F, model, mc)
    rep = _assemble(F, model, mc, terms, conditional=False)
    rep.extra["terms"] = terms
    return rep


def bound_conditional(F: GaussianFunctional, model: DiffusionModel,
                      mc: MCConfig = MCConfig()) -> BoundReport:
    """Both bounds; the conditional term uses an equal-count binned regression on ``Y``."""
    terms = stein_terms(F, model, mc)
    rep = _assemble(F, model, mc, terms, conditional=True)
    rep.extra["terms"] = terms
    return rep


@dataclass
class CharacterizationResult:
    """``E b(Y)`` and ``E|E[T | Y]|`` with 1-sigma stderrs.

    Both vanish when ``Y`` has the model's invariant law.
    """

    eb_residual: float
    eb_stderr: float
    conditional_residual: float
    conditional_stderr: float

    def consistent(self, k: float = 3.0, atol: float = 1e-9) -> bool:
        """Both residuals within ``k`` stderrs (plus ``atol`` for exact routes)."""
        return (abs(self.eb_residual) <= k * self.eb_stderr + atol
                and self.conditional_residual <= k * self.conditional_stderr + atol)

    def max_z(self) -> float:
        z = []
        for r, s in ((abs(self.eb_residual), self.eb_stderr),
                     (self.conditional_residual, self.conditional_stderr)):
            z.append(math.inf if s == 0 and r > 0 else (0.0 if r == 0 else r / s))
        return max(z)


def characterization_check(F: GaussianFunctional, model: DiffusionModel,
                           mc: MCConfig = MCConfig()) -> CharacterizationResult:
    """Empirical ``(E b(Y), E|E[T | Y]|)`` for the model's characterizing identities."""
    terms = stein_terms(F, model, mc)
    proj = conditional_projection(terms.y, terms.t, mc.bins)
    c, c_se = proj.abs_mean()
    n = terms.b.size
    return CharacterizationResult(float(terms.b.mean()),
                                  float(terms.b.std(ddof=1) / math.sqrt(n)), c, c_se)


# ---------------------------------------------------------------- reference distances

def _integrated_cdf(d: TargetDensity, x):
    """``int_l^x F`` as ``x F(x) - int_l^x y p(y) dy``."""
    x = np.asarray(x, dtype=float)
    return x * d.cdf(x) - d.partial_first_moment(x)


def _w1_sample_density(sample: np.ndarray, d: TargetDensity) -> float:
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    lo_, hi_ = x[:-1], x[1:]
    c = np.arange(1, n) / n
    s = np.clip(d.ppf(c), lo_, hi_)
    G = lambda t: _integrated_cdf(d, t)  # noqa: E731
    below = c * (s - lo_) - (G(s) - G(lo_))
    above = (G(hi_) - G(s)) - c * (hi_ - s)
    left = float(G(x[0]))
    right = float((d.mean - d.partial_first_moment(x[-1])) - x[-1] * d.sf(x[-1]))
    return float(below.sum() + above.sum()) + left + right


def _abs_gap_integral(fa, fb, lo, hi, grid) -> float:
    diff = lambda t: abs(float(fa(t)) - float(fb(t)))  # noqa: E731
    pts = np.unique(np.concatenate([[lo], grid[(grid > lo) & (grid < hi)], [hi]]))
    total = 0.0
    fin = pts[np.isfinite(pts)]
    for a_, b_ in zip(fin[:-1], fin[1:]):
        total += quad(diff, a_, b_)
    if not math.isfinite(pts[0]):
        total += quad(diff, -math.inf, min(fin[0], -1.0)) + (
            quad(diff, -1.0, fin[0]) if fin[0] > -1.0 else 0.0)
    if not math.isfinite(pts[-1]):
        total += quad(diff, max(fin[-1], 1.0), math.inf) + (
            quad(diff, fin[-1], 1.0) if fin[-1] < 1.0 else 0.0)
    return total


def _union_grid(A: TargetDensity, B: TargetDensity) -> np.ndarray:
    pts = [quantile_nodes(A, 512), quantile_nodes(B, 512)]
    for d in (A, B):
        pts.append(np.asarray(getattr(d, "breakpoints", ()), dtype=float))
        for e in (d.support.lower, d.support.upper):
            if math.isfinite(e):
                pts.append(np.array([e]))
    return np.unique(np.concatenate(pts))


def _cdf_any(d: TargetDensity):
    def F(x):
        x = np.asarray(x, dtype=float)
        lo, hi = d.support.lower, d.support.upper
        xc = np.clip(x, lo, hi)
        return np.where(x <= lo, 0.0, np.where(x >= hi, 1.0, d.cdf(xc)))
    return F


def _pdf_any(d: TargetDensity):
    def p(x):
        x = np.asarray(x, dtype=float)
        inside = d.support.contains(x)
        out = np.zeros(x.shape)
        if inside.any():
            out[inside] = d.pdf(x[inside])
        return out
    return p


def reference_distances(A, B, tv: bool | None = None) -> dict:
    """Kolmogorov, Wasserstein-1 and (for two densities) total-variation distances.

    Each argument is a :class:`TargetDensity` or a one-dimensional sample.
    Sample against density uses the one-sample K-S statistic and the exact
    ``int |F_n - F|``; two samples use the two-sample statistics.  ``tv=True``
    with a sample argument raises :class:`UnsupportedMode`.
    """
    if tv and not (isinstance(A, TargetDensity) and isinstance(B, TargetDensity)):
        raise UnsupportedMode("total variation needs two densities, not samples")
    a_is_d, b_is_d = isinstance(A, TargetDensity), isinstance(B, TargetDensity)
    if not a_is_d and b_is_d:
        A, B, a_is_d, b_is_d = B, A, True, False
    if a_is_d and b_is_d:
        FA, FB = _cdf_any(A), _cdf_any(B)
        grid = _union_grid(A, B)
        gap = np.abs(FA(grid) - FB(grid))
        i = int(gap.argmax())
        lo_, hi_ = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        ks = float(gap[i])
        if hi_ > lo_:
            r = optimize.minimize_scalar(lambda t: -abs(float(FA(t) - FB(t))),
                                         bounds=(lo_, hi_), method="bounded",
                                         options={"xatol": 1e-12})
            ks = max(ks, -float(r.fun))
        lo = min(A.support.lower, B.support.lower)
        hi = max(A.support.upper, B.support.upper)
        w1 = _abs_gap_integral(FA, FB, lo, hi, grid)
        tv = 0.5 * _abs_gap_integral(_pdf_any(A), _pdf_any(B), lo, hi, grid)
        return {"kolmogorov": ks, "wasserstein1": w1, "total_variation": tv}
    if a_is_d:
        x = np.asarray(B, dtype=float).ravel()
        ks = float(stats.kstest(x, _cdf_any(A)).statistic)
        return {"kolmogorov": ks, "wasserstein1": _w1_sample_density(x, A)}
    xa = np.asarray(A, dtype=float).ravel()
    xb = np.asarray(B, dtype=float).ravel()
    return {"kolmogorov": float(stats.ks_2samp(xa, xb).statistic),
            "wasserstein1": float(stats.wasserstein_distance(xa, xb))}


def total_variation(A, B) -> float:
    return reference_distances(A, B, tv=True)["total_variation"]
