"""Path simulation of ``dX = b(X) dt + sqrt(a(X)) dW`` and occupation-measure checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import _kernels as K
from . import streams
from .diffusion import DiffusionModel
from .errors import DomainError, IntegrationBlowup

CHUNK_STEPS = 1 << 16
ACF_WINDOW = 1000
KS_COEFF = 1.358  # asymptotic 95% point of the Kolmogorov distribution


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings.

    ``x0=None`` starts at the target median.  States are recorded every
    ``stride`` steps.  ``burn_in`` is the discarded fraction of the horizon.
    """

    dt: float = 1e-3
    horizon: float = 1e4
    x0: float | None = None
    scheme: str = "euler"
    boundary: str = "reflect"
    seed: int = 0
    stride: int = 10
    burn_in: float = 0.1
    paths: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be positive")
        if self.dt >= self.horizon:
            raise ValueError("dt must be smaller than the horizon")
        if self.scheme not in ("euler", "milstein"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.boundary not in ("reflect", "clip"):
            raise ValueError(f"unknown boundary policy {self.boundary!r}")
        if self.stride < 1 or self.paths < 1:
            raise ValueError("stride and paths must be positive")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class PathResult:
    """Recorded states, shape ``(rows, paths)``, at times ``times``."""

    times: np.ndarray
    states: np.ndarray
    final: np.ndarray
    config: SimConfig
    backend: str

    def post_burn_in(self) -> np.ndarray:
        keep = self.times >= self.config.burn_in * self.config.horizon
        return self.states[keep]


def _kernel_args(model: DiffusionModel):
    tx, ta = model.kernel_table
    d = model.drift
    if d.is_affine:
        use_table, bx, by = False, np.zeros(2), np.zeros(2)
        slope, intercept = float(d.slope), float(d.intercept)
    else:
        bx = model.grid.nodes
        use_table, by, slope, intercept = True, model.b(bx), 0.0, 0.0
    return (int(model.kernel_code), model.kernel_params.astype(float),
            np.ascontiguousarray(tx, dtype=float), np.ascontiguousarray(ta, dtype=float),
            slope, intercept, use_table, np.ascontiguousarray(bx, dtype=float),
            np.ascontiguousarray(by, dtype=float))


def _start(model: DiffusionModel, config: SimConfig) -> float:
    x0 = model.density.median if config.x0 is None else float(config.x0)
    lo, hi = model.support.lower, model.support.upper
    if not lo < x0 < hi:
        raise DomainError(f"x0 = {x0} must lie strictly inside {model.support}")
    if not model.a(np.array([x0]))[0] > 0:
        raise DomainError(f"a(x0) must be positive at x0 = {x0}")
    return x0


def simulate_path(model: DiffusionModel, config: SimConfig = SimConfig(),
                  use_jit: bool | None = None) -> PathResult:
    """Euler-Maruyama (or Milstein) paths under the configured boundary policy.

    Noise for path ``i`` and chunk ``c`` comes from the stream
    ``(seed, PATH, i, c)``, so both backends see identical increments.
    """
    x0 = _start(model, config)
    jit = K.JIT_AVAILABLE if use_jit is None else (use_jit and K.JIT_AVAILABLE)
    code, p, tx, ta, slope, intercept, use_table, bx, by = _kernel_args(model)
    lo, hi = float(model.support.lower), float(model.support.upper)
    reflect = config.boundary == "reflect"
    milstein = config.scheme == "milstein"
    steps, stride = config.steps, config.stride
    rows = steps // stride
    out = np.empty((rows, config.paths))
    final = np.empty(config.paths)
    n_chunks = -(-steps // CHUNK_STEPS)

    def noise(i, c):
        m = min(CHUNK_STEPS, steps - c * CHUNK_STEPS)
        return streams.generator(config.seed, streams.PATH, i, c).standard_normal(m)

    if jit:
        for i in range(config.paths):
            x, phase, pos = x0, 0, 0
            col = np.empty(rows)
            for c in range(n_chunks):
                x, phase, pos, bad = K._step_chunk(
                    x, noise(i, c), config.dt, code, p, tx, ta, slope, intercept, use_table,
                    bx, by, lo, hi, reflect, milstein, stride, phase, col, pos)
                if bad >= 0:
                    raise IntegrationBlowup(f"non-finite state on path {i} at step "
                                            f"{c * CHUNK_STEPS + bad}")
            out[:, i] = col
            final[i] = x
    else:
        x = np.full(config.paths, x0)
        phase, pos = 0, 0
        for c in range(n_chunks):
            z = np.stack([noise(i, c) for i in range(config.paths)], axis=1)
            x, phase, pos, bad = K.step_chunk_numpy(
                x, z, config.dt, code, p, tx, ta, slope, intercept, use_table, bx, by,
                lo, hi, reflect, milstein, stride, phase, out, pos)
            if bad >= 0:
                raise IntegrationBlowup(f"non-finite state at step {c * CHUNK_STEPS + bad}")
        final[:] = x
    times = (np.arange(rows) + 1) * stride * config.dt
    return PathResult(times, out, final, config, "numba" if jit else "numpy")


def autocorrelation(x: np.ndarray, max_lag: int = ACF_WINDOW) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag`` via FFT."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    max_lag = min(max_lag, n - 1)
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[: max_lag + 1] / n
    if acov[0] == 0:
        return np.r_[1.0, np.zeros(max_lag)]
    return acov / acov[0]


def integrated_autocorrelation_time(x: np.ndarray, window: int = ACF_WINDOW) -> float:
    """``1 + 2 sum_{k=1}^{window} rho_k``, floored at 1."""
    rho = autocorrelation(x, window)
    return max(1.0, 1.0 + 2.0 * float(rho[1:].sum()))


@dataclass
class OccupationSummary:
    grid: np.ndarray
    empirical_cdf: np.ndarray
    ks_vs_target: float
    time_in_support_fraction: float
    mean: float
    target_mean: float
    mean_stderr: float
    tau: float
    n_eff: float
    ks_baseline: float
    samples: int

    @property
    def mean_z(self) -> float:
        return abs(self.mean - self.target_mean) / self.mean_stderr if self.mean_stderr else math.inf

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "ks_vs_target", "ks_baseline", "time_in_support_fraction", "mean", "target_mean",
            "mean_stderr", "tau", "n_eff", "samples")}


def occupation_summary(model: DiffusionModel, states: np.ndarray, cdf=None) -> OccupationSummary:
    """Compare recorded states (rows are times, columns paths) with a target cdf."""
    cdf = cdf or model.density.cdf
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    x = states.ravel()
    inside = (x >= model.support.lower) & (x <= model.support.upper)
    lo, hi = model.support.lower, model.support.upper

    def safe_cdf(t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, np.nextafter(lo, hi), np.nextafter(hi, lo))
        return np.where(t <= lo, 0.0, np.where(t >= hi, 1.0, cdf(tc)))

    ks = float(stats.kstest(x, safe_cdf).statistic)
    taus = [integrated_autocorrelation_time(states[:, j]) for j in range(states.shape[1])]
    tau = float(np.mean(taus))
    n_eff = x.size / tau
    xs = np.sort(x)
    grid = np.quantile(xs, np.linspace(0, 1, 513))
    ecdf = np.searchsorted(xs, grid, side="right") / xs.size
    mean = float(x.mean())
    return OccupationSummary(grid, ecdf, ks, float(inside.mean()), mean, model.density.mean,
                             float(x.std() / math.sqrt(n_eff)), tau, n_eff,
                             KS_COEFF / math.sqrt(n_eff), int(x.size))


def invariant_check(model: DiffusionModel, config: SimConfig = SimConfig(),
                    target_cdf=None) -> OccupationSummary:
    """One-sample K-S statistic of the post-burn-in occupation measure.

    ``target_cdf`` defaults to the model's own density; passing another cdf
    gives a wrong-pairing control.
    """
    if config.horizon < 100:
        raise ValueError("invariant_check needs a horizon of at least 100")
    res = simulate_path(model, config)
    return occupation_summary(model, res.post_burn_in(), target_cdf)


def halved_step(config: SimConfig) -> SimConfig:
    """Same horizon and recording times with half the step."""
    return replace(config, dt=config.dt / 2, stride=config.stride * 2)


def export_path_csv(result: PathResult, path, stride: int = 1, column: int = 0) -> None:
    """Write ``(t, X_t)`` rows, keeping every ``stride``-th recorded state."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for t, x in zip(result.times[::stride], result.states[::stride, column]):
            w.writerow([f"{t:.17g}", f"{x:.17g}"])
