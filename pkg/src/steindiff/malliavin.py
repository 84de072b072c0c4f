"""Smooth functionals ``Y = h(N)`` of a Gaussian vector and the scalar product

    <D(-L)^{-1}(Y - EY), DY> = int_0^1 da sum_ij K_ij d_i h(N) E'[d_j h(a N + sqrt(1-a^2) N')]

where ``N'`` is an independent copy of ``N``.  The ``a``-integral uses fixed
Gauss-Legendre nodes.  The inner expectation is either Monte Carlo over
``N'`` or, for quadratic forms and exponentials of separable quadratics,
an exact Gaussian integral.
"""
from __future__ import annotations

import configparser
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import streams
from .errors import ResolutionWarning, UnsupportedMode
from .quadrature import gauss_legendre_unit

FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)
DEFAULT_QUAD_NODES = 64
DEFAULT_BINS = 64
MIN_PAIRS = 10_000
MIN_PER_BIN = 50


def aux_gaussian_integrals(kc: float, c: float, a: float) -> tuple[float, float]:
    """``E exp(-kc X^2)`` and ``E X exp(-kc X^2)`` for ``X = c + sqrt(1-a^2) Z``.

    With ``d = 1 + 2 kc (1 - a^2)`` these are
    ``d^{-1/2} exp(-c^2 kc / d)`` and ``c d^{-3/2} exp(-c^2 kc / d)``.
    """
    from .errors import DomainError

    d = 1.0 + 2.0 * kc * (1.0 - a * a)
    if not d > 0:
        raise DomainError(f"1 + 2 kc (1 - a^2) = {d:g} must be positive")
    e = math.exp(-c * c * kc / d)
    return e / math.sqrt(d), c * e / d**1.5


def tilted_gaussian_moments(kappa, beta, c, s2):
    """``E exp(-kappa X^2 + beta X)`` and ``E X exp(...)`` for ``X ~ N(c, s2)``.

    Broadcasts over all arguments.  Returns ``(m0, m1)``.
    """
    d = 1.0 + 2.0 * kappa * s2
    m0 = np.exp((beta * c + 0.5 * beta * beta * s2 - kappa * c * c) / d) / np.sqrt(d)
    return m0, m0 * (c + beta * s2) / d


# ---------------------------------------------------------------- forms

class QuadraticForm:
    """``h(x) = x'Qx/2 + g'x + c0`` with symmetric ``Q``."""

    def __init__(self, Q, g=None, c0=0.0):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = self.Q.shape[0]
        self.g = np.zeros(n) if g is None else np.asarray(g, dtype=float)
        self.c0 = float(c0)
        if not np.allclose(self.Q, self.Q.T, atol=1e-14):
            raise ValueError("Q must be symmetric")

    @property
    def dim(self):
        return self.Q.shape[0]

    def h(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.g + self.c0

    def grad(self, x):
        return np.asarray(x, dtype=float) @ self.Q + self.g

    def closed_form_ok(self, K) -> bool:
        return True

    def scalar_product(self, N, K, nodes, weights):
        # E'[grad h(aN + sN')] = a Q N + g, so the a-integral is exact
        u = N @ self.Q
        a_int = float((weights * nodes).sum())  # int_0^1 a da
        return np.einsum("...i,ij,...j->...", u + self.g, K, a_int * u + self.g)


class ExpQuadraticForm:
    """``h(x) = offset + scale * exp(sum_i (-kappa_i x_i^2 + beta_i x_i))``.

    Coordinates sharing ``(kappa, beta)`` are grouped so the closed-form
    scalar product only needs per-group sums of ``N`` and ``N^2``; this keeps
    high-dimensional cases such as a product over hundreds of coordinates
    cheap.
    """

    def __init__(self, kappa, beta=0.0, scale=1.0, offset=0.0, dim=None):
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        n = dim or max(kappa.size, beta.size)
        self.kappa = np.broadcast_to(kappa, (n,)).copy()
        self.beta = np.broadcast_to(beta, (n,)).copy()
        self.scale = float(scale)
        self.offset = float(offset)
        pairs = list(zip(self.kappa, self.beta))
        self.groups = []
        for kb in dict.fromkeys(pairs):
            idx = np.array([i for i, p in enumerate(pairs) if p == kb])
            self.groups.append((float(kb[0]), float(kb[1]), idx))

    @property
    def dim(self):
        return self.kappa.size

    def log_core(self, x):
        x = np.asarray(x, dtype=float)
        return (-self.kappa * x * x + self.beta * x).sum(axis=-1)

    def h(self, x):
        return self.offset + self.scale * np.exp(self.log_core(x))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        core = self.scale * np.exp(self.log_core(x))
        return core[..., None] * (-2.0 * self.kappa * x + self.beta)

    def closed_form_ok(self, K) -> bool:
        return np.allclose(K, np.eye(self.dim), atol=1e-12) and bool(np.all(self.kappa > -0.5))

    def scalar_product(self, N, K, nodes, weights):
        N = np.asarray(N, dtype=float)
        a = nodes
        s2 = 1.0 - a * a
        log_terms = math.log(abs(self.scale)) * 2 + self.log_core(N)[..., None]
        lin = np.zeros(N.shape[:-1] + a.shape)
        for kap, bet, idx in self.groups:
            sub = N[..., idx]
            n_g = idx.size
            L = sub.sum(axis=-1)[..., None]
            Q = (sub * sub).sum(axis=-1)[..., None]
            d = 1.0 + 2.0 * kap * s2
            log_terms = log_terms - 0.5 * n_g * np.log(d) + (
                bet * a * L + 0.5 * n_g * bet * bet * s2 - kap * a * a * Q) / d
            lin = lin + (n_g * bet * bet - 2.0 * kap * bet * (1.0 + a) * L
                         + 4.0 * kap * kap * a * Q) / d
        return (weights * np.exp(log_terms) * lin).sum(axis=-1)


# ---------------------------------------------------------------- functional

class GaussianFunctional:
    """``Y = h(N)`` with ``N ~ N(0, K)``.

    Parameters
    ----------
    h, grad_h : callable
        Map arrays of shape ``(..., n)`` to ``(...)`` and ``(..., n)``.
        ``grad_h=None`` selects a central finite-difference gradient with
        step ``eps^(1/3) (1 + |x_i|)``.
    covariance : array_like, optional
        Defaults to the identity.
    form : QuadraticForm or ExpQuadraticForm, optional
        Enables the exact inner expectation.
    """

    def __init__(self, dim, h, grad_h=None, covariance=None, label="h", form=None,
                 check_gradient=True):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        K = np.eye(self.dim) if covariance is None else np.atleast_2d(
            np.asarray(covariance, dtype=float))
        if K.shape != (self.dim, self.dim):
            raise ValueError(f"covariance must be {self.dim}x{self.dim}")
        if np.abs(K - K.T).max() > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(K).min() < -1e-10:
            raise np.linalg.LinAlgError("covariance is not positive semidefinite")
        self.covariance = K
        self._h = h
        self._grad = grad_h
        self.label = label
        self.form = form
        if grad_h is not None and check_gradient:
            self._check_gradient()

    @classmethod
    def from_form(cls, form, covariance=None, label=None, check_gradient=True):
        return cls(form.dim, form.h, form.grad, covariance, label or type(form).__name__,
                   form, check_gradient)

    def h(self, x):
        return np.asarray(self._h(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._grad is None:
            return self.fd_grad(x)
        return np.asarray(self._grad(x), dtype=float)

    def fd_grad(self, x):
        """Central finite-difference gradient."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        for i in range(self.dim):
            step = FD_STEP * (1.0 + np.abs(x[..., i]))
            xp, xm = x.copy(), x.copy()
            xp[..., i] += step
            xm[..., i] -= step
            out[..., i] = (self.h(xp) - self.h(xm)) / (2.0 * step)
        return out

    def _check_gradient(self, points=20, seed=20240):
        x = streams.generator(seed, streams.CHECK).standard_normal((points, self.dim))
        ga, gf = self.grad(x), self.fd_grad(x)
        scale = np.maximum(np.abs(ga), 1.0)
        err = np.abs(ga - gf) / scale
        if err.max() > 1e-5:
            i = int(np.unravel_index(err.argmax(), err.shape)[0])
            raise ValueError(f"analytic gradient of {self.label} disagrees with finite "
                             f"differences at {x[i]} (relative error {err.max():.2e})")

    @property
    def closed_form_capable(self) -> bool:
        return self.form is not None and self.form.closed_form_ok(self.covariance)

    def sample(self, count: int, seed: int, *key: int):
        """``(N, Y)`` for ``count`` draws from the stream ``(seed, *key)``."""
        N = sample_gaussian_vector(self.covariance, count, seed, *key)
        return N, self.h(N)

    def __repr__(self):
        return f"GaussianFunctional({self.label}, dim={self.dim})"


def _factor(K):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(K)
        if w.min() < -1e-10:
            raise np.linalg.LinAlgError("covariance is not positive semidefinite") from None
        return V * np.sqrt(np.maximum(w, 0.0))


def sample_gaussian_vector(K, count: int, seed: int, *key: int) -> np.ndarray:
    """``count`` draws of ``N(0, K)``, shape ``(count, n)``; deterministic in ``(seed, key)``."""
    L = _factor(K)
    z = streams.generator(seed, *(key or (streams.OUTER,))).standard_normal((count, L.shape[0]))
    if np.array_equal(L, np.eye(L.shape[0])):
        return z
    return z @ L.T


# ---------------------------------------------------------------- scalar product

@dataclass(frozen=True)
class MehlerConfig:
    quad_nodes: int = DEFAULT_QUAD_NODES
    inner_samples: int = 0
    seed: int = 0
    method: str = "auto"  # auto | closed-form | inner-mc


@dataclass
class ScalarProductEstimate:
    """Scalar product per realization, with inner Monte Carlo stderr (0 if exact)."""

    value: np.ndarray
    stderr: np.ndarray
    method: str

    @property
    def mean(self) -> float:
        return float(np.mean(self.value))


def _nodes(quad_nodes: int):
    if quad_nodes < 16:
        raise ValueError("quad_nodes must be at least 16")
    return gauss_legendre_unit(int(quad_nodes))


def inner_expectation(F: GaussianFunctional, N, a: float, inner_samples: int, seed: int,
                      *key: int) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo ``E'[grad h(a N + sqrt(1-a^2) N')]`` and its stderr, for one ``N``."""
    Np = sample_gaussian_vector(F.covariance, inner_samples, seed, *(key or (streams.INNER,)))
    X = a * np.asarray(N, dtype=float) + math.sqrt(max(1.0 - a * a, 0.0)) * Np
    g = F.grad(X)
    return g.mean(axis=0), g.std(axis=0, ddof=1) / math.sqrt(inner_samples)


def mehler_scalar_product(F: GaussianFunctional, N, config: MehlerConfig = MehlerConfig(),
                          realization_offset: int = 0,
                          inner: GaussianFunctional | None = None) -> ScalarProductEstimate:
    """Scalar product for each realization in ``N`` (shape ``(n,)`` or ``(B, n)``).

    With ``inner`` given, computes ``<D(-L)^{-1} G, DY>`` for ``G = inner(N)``
    instead of ``G = Y``; that route is Monte Carlo only.  ``inner-mc`` draws ``inner_samples`` copies of ``N'`` per realization
    (stream ``(seed, INNER, realization_offset + i)``) and reuses them at
    every ``a`` node; the reported stderr is that of the mean over copies.
    """
    N = np.asarray(N, dtype=float)
    single = N.ndim == 1
    N2 = np.atleast_2d(N)
    if N2.shape[-1] != F.dim:
        raise ValueError(f"realizations must have {F.dim} coordinates")
    nodes, weights = _nodes(config.quad_nodes)
    method = config.method
    if method == "auto":
        exact = F.closed_form_capable and inner is None
        method = "inner-closed-form" if exact else "inner-mc"
    if inner is not None and inner.dim != F.dim:
        raise ValueError("inner functional must share the Gaussian vector")
    if method in ("closed-form", "inner-closed-form"):
        if not F.closed_form_capable or inner is not None:
            raise UnsupportedMode(f"{F.label} has no closed-form inner expectation")
        val = F.form.scalar_product(N2, F.covariance, nodes, weights)
        se = np.zeros_like(val)
        method = "inner-closed-form"
    elif method == "inner-mc":
        if config.inner_samples < 2:
            raise ValueError("inner-mc needs inner_samples >= 2")
        val = np.empty(N2.shape[0])
        se = np.empty(N2.shape[0])
        s = np.sqrt(np.maximum(1.0 - nodes * nodes, 0.0))
        K = F.covariance
        for i, n_i in enumerate(N2):
            try:
                gN = F.grad(n_i)
            except Exception as exc:  # noqa: BLE001
                raise type(exc)(f"gradient failed at N={n_i}: {exc}") from exc
            Np = sample_gaussian_vector(K, config.inner_samples, config.seed, streams.INNER,
                                        realization_offset + i)
            X = nodes[None, :, None] * n_i + s[None, :, None] * Np[:, None, :]
            G = (inner or F).grad(X)  # (M, nodes, n)
            per_copy = ((G @ (K @ gN)) * weights).sum(axis=1)
            val[i] = per_copy.mean()
            se[i] = per_copy.std(ddof=1) / math.sqrt(per_copy.size)
    else:
        raise ValueError(f"unknown method {config.method!r}")
    if single:
        return ScalarProductEstimate(val[0:1].copy().reshape(()), se[0:1].reshape(()), method)
    return ScalarProductEstimate(val, se, method)


# ---------------------------------------------------------------- conditional projection

@dataclass
class BinnedProjection:
    """Equal-count bin means of ``V`` given ``Y``.

    ``edges`` has ``len(mean) + 1`` entries; the outer two are the sample
    extremes.  ``se`` is the within-bin standard error of the mean.
    """

    edges: np.ndarray
    count: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    y_mean: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return self.count / self.count.sum()

    def bin_of(self, y):
        return np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, self.mean.size - 1)

    def __call__(self, y):
        return self.mean[self.bin_of(np.asarray(y, dtype=float))]

    def abs_mean(self) -> tuple[float, float]:
        """``E|E[V|Y]|`` and its noise floor ``sqrt(sum_k w_k se_k^2)``."""
        w = self.weights
        return float((w * np.abs(self.mean)).sum()), float(np.sqrt((w * self.se**2).sum()))


@dataclass
class KernelProjection:
    """Nadaraya-Watson regression with a Gaussian kernel, on a binned grid."""

    grid: np.ndarray
    values: np.ndarray
    bandwidth: float

    def __call__(self, y):
        return np.interp(np.asarray(y, dtype=float), self.grid, self.values)


def conditional_projection(y, v, num_bins: int = DEFAULT_BINS, bandwidth: float | None = None):
    """Estimate ``y -> E[V | Y = y]`` from paired samples.

    Equal-count bins by default; with ``bandwidth`` a Gaussian-kernel
    regression evaluated on 1024 grid points.  Fewer than 50 pairs per bin
    triggers :class:`ResolutionWarning` and merges bins.
    """
    y = np.asarray(y, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if y.shape != v.shape:
        raise ValueError("y and v must have the same length")
    n = y.size
    if n < MIN_PAIRS:
        raise ValueError(f"conditional projection needs at least {MIN_PAIRS} pairs, got {n}")
    if bandwidth is not None:
        grid = np.linspace(*np.quantile(y, [0.001, 0.999]), 1024)
        fine = np.linspace(y.min(), y.max(), 8193)
        idx = np.clip(np.searchsorted(fine, y) - 1, 0, fine.size - 2)
        cnt = np.bincount(idx, minlength=fine.size - 1).astype(float)
        tot = np.bincount(idx, weights=v, minlength=fine.size - 1)
        mids = 0.5 * (fine[1:] + fine[:-1])
        wk = np.exp(-0.5 * ((grid[:, None] - mids[None, :]) / bandwidth) ** 2)
        values = (wk @ tot) / np.maximum(wk @ cnt, 1e-300)
        return KernelProjection(grid, values, float(bandwidth))
    if n // num_bins < MIN_PER_BIN:
        merged = max(n // MIN_PER_BIN, 1)
        warnings.warn(f"{n} pairs give fewer than {MIN_PER_BIN} per bin with {num_bins} "
                      f"bins; merging to {merged} bins", ResolutionWarning, stacklevel=2)
        num_bins = merged
    order = np.argsort(y, kind="stable")
    ys, vs = y[order], v[order]
    parts = np.array_split(np.arange(n), num_bins)
    count = np.array([p.size for p in parts], dtype=float)
    mean = np.array([vs[p].mean() for p in parts])
    se = np.array([vs[p].std(ddof=1) / math.sqrt(p.size) for p in parts])
    y_mean = np.array([ys[p].mean() for p in parts])
    edges = np.concatenate([[ys[0]], [ys[p[0]] for p in parts[1:]], [ys[-1]]])
    return BinnedProjection(edges, count, mean, se, y_mean)


# ---------------------------------------------------------------- registry

def _quadratic(Q, label, g=None):
    return GaussianFunctional.from_form(QuadraticForm(Q, g), label=label)


def _exp(kappa, n, label, beta=0.0, scale=1.0, offset=0.0):
    return GaussianFunctional.from_form(ExpQuadraticForm(kappa, beta, scale, offset, n),
                                        label=label)


def make_functional(name: str, **params) -> GaussianFunctional:
    """Named functionals of standard Gaussian vectors.

    ============================  ===============================================
    name                          ``h``
    ============================  ===============================================
    ``chi_square``                ``x^2``
    ``exp_neg_half_sum``          ``exp(-|x|^2/2)``, ``n=2``
    ``exp_neg_sum``               ``exp(-|x|^2)``, ``n=2``
    ``exp_quarter_sum_minus_one`` ``exp(|x|^2/4) - 1``, ``n=2``
    ``exp_single``                ``exp(x)``
    ``product_pairs``             ``x1 x2 + x3 x4``
    ``half_diff_squares``         ``(x1^2 + x2^2 - x3^2 - x4^2)/2``
    ``scaled_log_product``        ``exp(-sum_i (x_i^2 - 1) / sqrt(2N))``, ``n=N``
    ``identity``                  ``x``
    ``constant``                  ``c`` (parameter ``c``)
    ============================  ===============================================
    """
    n = int(params.pop("n", 0) or 0)
    if name == "chi_square":
        return _quadratic([[2.0]], "chi_square")
    if name == "constant":
        c = float(params.pop("c", 0.0))
        return GaussianFunctional.from_form(QuadraticForm(np.zeros((n or 1, n or 1)), None, c),
                                            label=f"constant({c:g})")
    if name == "identity":
        return _quadratic([[0.0]], "identity", g=[1.0])
    if name == "exp_neg_half_sum":
        return _exp(0.5, n or 2, "exp_neg_half_sum")
    if name == "exp_neg_sum":
        return _exp(1.0, n or 2, "exp_neg_sum")
    if name == "exp_quarter_sum_minus_one":
        return _exp(-0.25, n or 2, "exp_quarter_sum_minus_one", offset=-1.0)
    if name == "exp_single":
        return _exp(0.0, 1, "exp_single", beta=1.0)
    if name == "product_pairs":
        Q = np.zeros((4, 4))
        Q[0, 1] = Q[1, 0] = Q[2, 3] = Q[3, 2] = 1.0
        return _quadratic(Q, "product_pairs")
    if name == "half_diff_squares":
        return _quadratic(np.diag([1.0, 1.0, -1.0, -1.0]), "half_diff_squares")
    if name == "scaled_log_product":
        N = int(params.pop("N", n or 0))
        if N < 1:
            raise ValueError("scaled_log_product needs N >= 1")
        k = 1.0 / math.sqrt(2.0 * N)
        return _exp(k, N, f"scaled_log_product({N})", scale=math.exp(N * k))
    raise ValueError(f"unknown functional {name!r}")


FUNCTIONAL_NAMES = ("chi_square", "exp_neg_half_sum", "exp_neg_sum",
                    "exp_quarter_sum_minus_one", "exp_single", "product_pairs",
                    "half_diff_squares", "scaled_log_product", "identity", "constant")


def parse_covariance(text: str, dim: int) -> np.ndarray:
    """``identity`` or rows separated by ``;`` with comma-separated entries."""
    text = text.strip()
    if text in ("", "identity", "I"):
        return np.eye(dim)
    rows = [[float(v) for v in r.split(",")] for r in text.split(";") if r.strip()]
    return np.array(rows)


def load_functional_config(path_or_parser, section: str = "functional") -> GaussianFunctional:
    """Build a functional from an INI section.

    Keys: ``form`` (registry name), optional ``dim``, ``covariance`` and any
    form parameter such as ``N``.  A non-identity covariance switches the
    functional to the inner Monte Carlo route.
    """
    if isinstance(path_or_parser, configparser.ConfigParser):
        cp = path_or_parser
    else:
        cp = configparser.ConfigParser()
        if not cp.read(path_or_parser):
            raise FileNotFoundError(path_or_parser)
    sec = cp[section]
    params = {k: v for k, v in sec.items() if k not in ("form", "dim", "covariance")}
    if "n" in params:
        params["N"] = params.pop("n")
    F = make_functional(sec["form"], **params)
    dim = int(sec.get("dim", F.dim))
    if dim != F.dim:
        raise ValueError(f"form {sec['form']} has dimension {F.dim}, config says {dim}")
    cov = sec.get("covariance", "identity")
    if cov.strip() not in ("", "identity", "I"):
        F = GaussianFunctional(F.dim, F.form.h, F.form.grad, parse_covariance(cov, F.dim),
                               F.label, F.form)
    return F


def composed(F: GaussianFunctional, outer_fun, label: str | None = None) -> GaussianFunctional:
    """``x -> outer_fun(F.h(x))`` with a chain-rule gradient.

    The derivative of ``outer_fun`` uses a central difference with step
    ``eps^(1/3) (1 + |y|)``.
    """
    def h(x):
        return np.asarray(outer_fun(F.h(x)), dtype=float)

    def grad(x):
        y = F.h(x)
        step = FD_STEP * (1.0 + np.abs(y))
        d = (np.asarray(outer_fun(y + step)) - np.asarray(outer_fun(y - step))) / (2.0 * step)
        return d[..., None] * F.grad(x)

    return GaussianFunctional(F.dim, h, grad, F.covariance, label or f"b({F.label})",
                              check_gradient=False)
