"""Time the compiled path kernel against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--horizon 100] [--paths 1] [--repeat 3]

Prints one row per family with the best wall time of each backend, the
speed-up and the largest state difference between the two runs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from steindiff import _kernels as K
from steindiff.diffusion import family_model
from steindiff.sde import SimConfig, simulate_path

FAMILIES = ("normal", "uniform", "lognormal", "laplace")


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, result = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench(horizon: float = 100.0, paths: int = 1, repeat: int = 3, families=FAMILIES):
    rows = []
    for fam in families:
        model = family_model(fam)
        cfg = SimConfig(horizon=horizon, paths=paths, seed=1)
        if K.JIT_AVAILABLE:
            simulate_path(model, SimConfig(horizon=1.0, seed=1), use_jit=True)  # compile
            t_jit, fast = best_time(lambda: simulate_path(model, cfg, use_jit=True), repeat)
        else:
            t_jit, fast = float("nan"), None
        t_np, slow = best_time(lambda: simulate_path(model, cfg, use_jit=False), repeat)
        diff = float(np.abs(fast.states - slow.states).max()) if fast is not None else float("nan")
        rows.append({"family": fam, "steps": cfg.steps * paths, "numba_s": t_jit,
                     "numpy_s": t_np, "speedup": t_np / t_jit, "max_abs_diff": diff})
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=100.0)
    ap.add_argument("--paths", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'family':<10} {'steps':>9} {'numba s':>9} {'numpy s':>9} {'speedup':>8} {'max diff':>9}")
    for r in bench(args.horizon, args.paths, args.repeat):
        print(f"{r['family']:<10} {r['steps']:>9d} {r['numba_s']:>9.4f} {r['numpy_s']:>9.4f} "
              f"{r['speedup']:>8.1f} {r['max_abs_diff']:>9.2e}")


if __name__ == "__main__":
    main()
