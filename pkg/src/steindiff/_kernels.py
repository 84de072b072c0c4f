"""Compiled inner loops for path simulation, with a pure-numpy fallback.

Set ``STEINDIFF_DISABLE_JIT=1`` to skip numba entirely.  Both backends read
the same coefficient encoding so they can be benchmarked against each other.

Coefficient codes for the squared diffusion coefficient ``a``:

====  ===========================================  ====================
code  form                                         params
====  ===========================================  ====================
0     ``c0``                                       c0
1     ``c0 * (x - c1)``                            c0, c1
2     ``c0 * (x - c1) * (c2 - x)``                 c0, c1, c2
3     ``c0 * x * (1 + x)``                         c0
4     ``c0 * (1 + c1 * |x|)``                      c0, c1
5     lognormal ratio of normal cdf gaps           mean, delta, sigma
6     linear interpolation of a table              (uses table arrays)
====  ===========================================  ====================
"""
from __future__ import annotations

import math
import os

import numpy as np
from scipy import special

_DISABLED = os.environ.get("STEINDIFF_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit
    JIT_AVAILABLE = True
except ImportError:  # numba missing or disabled by flag
    JIT_AVAILABLE = False

A_CONST, A_LINEAR, A_INTERVAL, A_PARETO, A_LAPLACE, A_LOGNORMAL, A_TABLE = range(7)
SQRT2 = math.sqrt(2.0)
SQRT_HALF_PI = math.sqrt(0.5 * math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if JIT_AVAILABLE:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f


def backend() -> str:
    return "numba" if JIT_AVAILABLE else "numpy"


# ---------------------------------------------------------------- scalar core

@njit(cache=True)
def _mills(t):
    # upper-tail normal probability divided by the normal density at t
    if t < 30.0:
        return 0.5 * math.erfc(t / SQRT2) / (INV_SQRT_2PI * math.exp(-0.5 * t * t))
    it2 = 1.0 / (t * t)
    return (1.0 - it2 * (1.0 - 3.0 * it2 * (1.0 - 5.0 * it2))) / t


@njit(cache=True)
def lognormal_gap_ratio(z, s):
    """``(Phi(z) - Phi(z - s)) / phi(z)`` without overflow."""
    tilt = math.exp(z * s - 0.5 * s * s)
    if z <= 0.5 * s:
        return _mills(-z) - _mills(s - z) * tilt
    return _mills(z - s) * tilt - _mills(z)


@njit(cache=True)
def a_scalar(code, p, tx, ta, x):
    if code == 0:
        return p[0]
    if code == 1:
        return p[0] * (x - p[1])
    if code == 2:
        return p[0] * (x - p[1]) * (p[2] - x)
    if code == 3:
        return p[0] * x * (1.0 + x)
    if code == 4:
        return p[0] * (1.0 + p[1] * abs(x))
    if code == 5:
        if x <= 0.0:
            return 0.0
        z = (math.log(x) - p[1]) / p[2]
        return 2.0 * p[0] * x * p[2] * lognormal_gap_ratio(z, p[2])
    # table
    n = tx.shape[0]
    if x <= tx[0] or x >= tx[n - 1]:
        return 0.0
    k = np.searchsorted(tx, x) - 1
    w = (x - tx[k]) / (tx[k + 1] - tx[k])
    return ta[k] + w * (ta[k + 1] - ta[k])


@njit(cache=True)
def b_scalar(slope, intercept, use_table, bx, by, x):
    if not use_table:
        return slope * x + intercept
    n = bx.shape[0]
    if x <= bx[0]:
        return by[0]
    if x >= bx[n - 1]:
        return by[n - 1]
    k = np.searchsorted(bx, x) - 1
    w = (x - bx[k]) / (bx[k + 1] - bx[k])
    return by[k] + w * (by[k + 1] - by[k])


@njit(cache=True)
def _sigma(code, p, tx, ta, lo, hi, x):
    if x <= lo or x >= hi:
        return 0.0
    a = a_scalar(code, p, tx, ta, x)
    return math.sqrt(a) if a > 0.0 else 0.0


@njit(cache=True)
def _step_chunk(x, noise, dt, code, p, tx, ta, slope, intercept, use_table, bx, by,
                lo, hi, reflect, milstein, stride, phase, out, out_pos):
    """Advance one path through ``noise.shape[0]`` steps.

    Returns ``(x, phase, out_pos, bad_step)`` with ``bad_step = -1`` unless a
    non-finite state appeared.
    """
    sdt = math.sqrt(dt)
    for i in range(noise.shape[0]):
        xi = noise[i]
        sig = _sigma(code, p, tx, ta, lo, hi, x)
        drift = b_scalar(slope, intercept, use_table, bx, by, x)
        xn = x + drift * dt + sig * sdt * xi
        if milstein:
            d = 1e-6 * (1.0 + abs(x))
            ds = (_sigma(code, p, tx, ta, lo, hi, x + d)
                  - _sigma(code, p, tx, ta, lo, hi, x - d)) / (2.0 * d)
            xn += 0.5 * sig * ds * dt * (xi * xi - 1.0)
        if not math.isfinite(xn):
            return x, phase, out_pos, i
        if reflect:
            if xn < lo:
                xn = 2.0 * lo - xn
            if xn > hi:
                xn = 2.0 * hi - xn
        if xn < lo:
            xn = lo
        elif xn > hi:
            xn = hi
        x = xn
        phase += 1
        if phase == stride:
            phase = 0
            if out_pos < out.shape[0]:
                out[out_pos] = x
                out_pos += 1
    return x, phase, out_pos, -1


# ---------------------------------------------------------------- numpy path

def lognormal_gap_ratio_np(z, s):
    """Vectorised :func:`lognormal_gap_ratio` via the scaled complementary erf."""
    z = np.asarray(z, dtype=float)
    mills = lambda t: SQRT_HALF_PI * special.erfcx(t / SQRT2)  # noqa: E731
    with np.errstate(over="ignore", invalid="ignore"):
        tilt = np.exp(z * s - 0.5 * s * s)
        low = mills(-z) - mills(s - z) * tilt
        high = mills(z - s) * tilt - mills(z)
    return np.where(z <= 0.5 * s, low, high)


def a_vector(code, p, tx, ta, x):
    x = np.asarray(x, dtype=float)
    if code == A_CONST:
        return np.full(x.shape, p[0])
    if code == A_LINEAR:
        return p[0] * (x - p[1])
    if code == A_INTERVAL:
        return p[0] * (x - p[1]) * (p[2] - x)
    if code == A_PARETO:
        return p[0] * x * (1.0 + x)
    if code == A_LAPLACE:
        return p[0] * (1.0 + p[1] * np.abs(x))
    if code == A_LOGNORMAL:
        pos = x > 0
        z = (np.log(np.where(pos, x, 1.0)) - p[1]) / p[2]
        return np.where(pos, 2.0 * p[0] * x * p[2] * lognormal_gap_ratio_np(z, p[2]), 0.0)
    return np.interp(x, tx, ta, left=0.0, right=0.0)


def b_vector(slope, intercept, use_table, bx, by, x):
    if not use_table:
        return slope * x + intercept
    return np.interp(x, bx, by)


def _sigma_vec(code, p, tx, ta, lo, hi, x):
    a = a_vector(code, p, tx, ta, x)
    a = np.where((x <= lo) | (x >= hi), 0.0, a)
    return np.sqrt(np.maximum(a, 0.0))


def step_chunk_numpy(x, noise, dt, code, p, tx, ta, slope, intercept, use_table, bx, by,
                     lo, hi, reflect, milstein, stride, phase, out, out_pos):
    """Numpy twin of :func:`_step_chunk`, vectorised over paths.

    ``x`` has shape ``(paths,)``, ``noise`` ``(steps, paths)`` and ``out``
    ``(rows, paths)``.  Returns the same tuple as the compiled kernel, with
    ``bad_step`` the first step index where any path went non-finite.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _step_loop_numpy(x, noise, dt, code, p, tx, ta, slope, intercept, use_table,
                                bx, by, lo, hi, reflect, milstein, stride, phase, out, out_pos)


def _step_loop_numpy(x, noise, dt, code, p, tx, ta, slope, intercept, use_table, bx, by,
                     lo, hi, reflect, milstein, stride, phase, out, out_pos):
    sdt = math.sqrt(dt)
    x = np.array(x, dtype=float)
    for i in range(noise.shape[0]):
        xi = noise[i]
        sig = _sigma_vec(code, p, tx, ta, lo, hi, x)
        xn = x + b_vector(slope, intercept, use_table, bx, by, x) * dt + sig * sdt * xi
        if milstein:
            d = 1e-6 * (1.0 + np.abs(x))
            ds = (_sigma_vec(code, p, tx, ta, lo, hi, x + d)
                  - _sigma_vec(code, p, tx, ta, lo, hi, x - d)) / (2.0 * d)
            xn += 0.5 * sig * ds * dt * (xi * xi - 1.0)
        if not np.isfinite(xn).all():
            return x, phase, out_pos, i
        if reflect:
            xn = np.where(xn < lo, 2.0 * lo - xn, xn)
            xn = np.where(xn > hi, 2.0 * hi - xn, xn)
        x = np.clip(xn, lo, hi)
        phase += 1
        if phase == stride:
            phase = 0
            if out_pos < out.shape[0]:
                out[out_pos] = x
                out_pos += 1
    return x, phase, out_pos, -1
