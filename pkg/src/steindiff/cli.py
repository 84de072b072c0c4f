"""Command-line driver.

Every subcommand writes its artifacts under ``--out`` together with a
``run.ini`` record holding the resolved arguments and seed, so
``steindiff --config OUT/run.ini <command>`` repeats the run exactly.

Exit codes: 0 success, 1 a check failed, 2 bad usage or input.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, streams
from .errors import SteinDiffError

DEFAULT_OUT = "steindiff-out"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
STEIN_RESIDUAL_TOL = 1e-6


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _kv(d: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in d.items())


def _parse_params(items) -> dict:
    out = {}
    for item in items or ():
        for part in item.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise UsageError(f"--param expects key=value, got {part!r}")
            k, v = part.split("=", 1)
            try:
                out[k.strip()] = float(v)
            except ValueError:
                raise UsageError(f"--param {k.strip()} needs a number, got {v!r}") from None
    return out


# ---------------------------------------------------------------- model resolution

def _density(args):
    from .densities import load_tabulated_csv, make_family

    if getattr(args, "density_csv", None):
        return load_tabulated_csv(args.density_csv)
    if not args.family:
        raise UsageError("give --family or --density-csv")
    return make_family(args.family, _parse_params(args.param))


def _model(args):
    from .diffusion import model_for

    return model_for(_density(args), numeric=getattr(args, "numeric", False))


def _model_from_out(args):
    """Use ``--family``/``--density-csv`` if given, else ``model.ini`` in ``--out``."""
    if args.family or getattr(args, "density_csv", None):
        return _model(args)
    ini = Path(args.out) / "model.ini"
    if not ini.exists():
        raise UsageError("give --family or --density-csv, or run `build` first")
    cp = configparser.ConfigParser()
    cp.read(ini)
    sec = cp["model"]
    args.family = sec.get("family") or None
    args.density_csv = sec.get("density_csv") or None
    args.param = [sec.get("params", "")]
    args.numeric = sec.getboolean("numeric", False)
    return _model(args)


def _mc(args):
    from .bounds import MCConfig

    return MCConfig(samples=args.samples, inner_samples=args.inner_samples,
                    quad_nodes=args.quad_nodes, seed=args.seed, bins=args.bins)


# ---------------------------------------------------------------- subcommands

def cmd_density(args, out: Path) -> int:
    d = _density(args)
    q = (np.arange(args.points) + 0.5) / args.points
    x = np.array([float(v) for v in args.x.split(",")]) if args.x else d.ppf(q)
    pdf, cdf = d.pdf(x), d.cdf(x)
    info = {"family": d.family, "params": d.params, "support": str(d.support),
            "mean": d.mean, "variance": d.variance, "median": d.median}
    with open(out / "density.csv", "w") as fh:
        fh.write("x,pdf,cdf\n")
        for row in zip(x, pdf, cdf):
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    (out / "density.txt").write_text(_kv(info))
    sys.stdout.write(_kv(info))
    return EXIT_OK


def cmd_build(args, out: Path) -> int:
    from .diffusion import export_model_csv, validate_model

    model = _model(args)
    rep = validate_model(model)
    export_model_csv(model, out / "model.csv")
    info = {"model": repr(model), **rep.as_dict()}
    for i, m in enumerate(rep.messages):
        info[f"message_{i}"] = m
    (out / "validation.txt").write_text(_kv(info))
    cp = configparser.ConfigParser()
    cp["model"] = {"family": args.family or "", "density_csv": args.density_csv or "",
                   "params": ",".join(args.param or []), "numeric": str(bool(args.numeric))}
    with open(out / "model.ini", "w") as fh:
        cp.write(fh)
    sys.stdout.write(_kv(info))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_stein(args, out: Path) -> int:
    from .stein import (estimate_norm_constants, export_solution_csv, named_test_function,
                        residual, solve)

    model = _model_from_out(args)
    f = named_test_function(args.f, model.density)
    sol = solve(f, model)
    res = residual(sol, model, f)
    info = {"model": repr(model), "test_function": f.label, "mean_f": sol.m_f,
            "residual": res, "residual_tol": STEIN_RESIDUAL_TOL,
            "residual_pass": res < STEIN_RESIDUAL_TOL, **{f"norm_{k}": v
                                                          for k, v in sol.norms.items()}}
    if not args.no_constants:
        nc = estimate_norm_constants(model)
        info.update(function_class=nc.function_class, c1=nc.c1, c2=nc.c2, c4=nc.c4,
                    c_gprime=nc.c_gprime, constants_note=nc.note)
    export_solution_csv(sol, out / "solution.csv")
    (out / "stein.txt").write_text(_kv(info))
    sys.stdout.write(_kv(info))
    return EXIT_OK if res < STEIN_RESIDUAL_TOL else EXIT_FAIL


def _functional(args):
    from .malliavin import load_functional_config, make_functional

    if args.functional_config:
        return load_functional_config(args.functional_config)
    if not args.functional:
        raise UsageError("give --functional or --functional-config")
    params = {k: int(v) if float(v).is_integer() else v
              for k, v in _parse_params(args.fparam).items()}
    return make_functional(args.functional, **params)


def cmd_bound(args, out: Path) -> int:
    from .bounds import BoundReport, bound_conditional, bound_unconditional

    F = _functional(args)
    model = _model(args)
    mc = _mc(args)
    rep = (bound_unconditional if args.unconditional_only else bound_conditional)(F, model, mc)
    text = rep.to_kv() + f"tower_ok = {rep.tower_ok()}\n"
    (out / "bound.txt").write_text(text)
    (out / "bound.csv").write_text(BoundReport.csv_header() + "\n" + rep.to_csv_row() + "\n")
    sys.stdout.write(text)
    return EXIT_OK if rep.tower_ok() else EXIT_FAIL


def cmd_simulate(args, out: Path) -> int:
    from .densities import make_family
    from .sde import SimConfig, export_path_csv, occupation_summary, simulate_path

    model = _model(args)
    cfg = SimConfig(dt=args.dt, horizon=args.horizon, x0=args.x0, scheme=args.scheme,
                    boundary=args.boundary, seed=args.seed, stride=args.stride,
                    paths=args.paths)
    res = simulate_path(model, cfg)
    cdf = make_family(args.check_against).cdf if args.check_against else None
    summ = occupation_summary(model, res.post_burn_in(), cdf)
    info = {"model": repr(model), "backend": res.backend, "steps": cfg.steps,
            **summ.as_dict(), "mean_z": summ.mean_z}
    ok = True
    if args.ks_max is not None:
        ok = summ.ks_vs_target < args.ks_max
        info["ks_max"] = args.ks_max
        info["ks_pass"] = ok
    if args.path_csv:
        export_path_csv(res, out / "path.csv", stride=args.path_stride)
    (out / "simulate.txt").write_text(_kv(info))
    sys.stdout.write(_kv(info))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(args, out: Path) -> int:
    from .experiments import WORKED_EXAMPLES, run_worked_example

    names = list(WORKED_EXAMPLES) if args.example == "all" else [args.example]
    if any(n not in WORKED_EXAMPLES for n in names):
        raise UsageError(f"--example must be one of {', '.join(WORKED_EXAMPLES)} or all")
    ok = True
    lines = []
    for n in names:
        rep = run_worked_example(n, _mc(args))
        ok &= rep.passed
        b = rep.bound
        lines += rep.lines()
        lines += [f"term1_unconditional = {_fmt(b.term1_unconditional)} "
                  f"+- {_fmt(b.term1_unconditional_stderr)}",
                  f"term1_conditional = {_fmt(b.term1_conditional)} "
                  f"+- {_fmt(b.term1_conditional_stderr)}",
                  f"term2 = {_fmt(b.term2)} +- {_fmt(b.term2_stderr)}",
                  f"bound = {_fmt(b.bound)}", f"bound_conditional = {_fmt(b.bound_conditional)}",
                  ""]
    text = "\n".join(lines)
    (out / "verify.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_rate(args, out: Path) -> int:
    from .experiments import lognormal_rate_experiment

    try:
        ns = [int(v) for v in args.n.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--n expects comma-separated integers, got {args.n!r}") from None
    table = lognormal_rate_experiment(ns, _mc(args))
    table.to_csv(out / "rate.csv")
    table.to_gnuplot(out / "rate.dat")
    sys.stdout.write((out / "rate.csv").read_text())
    lo, hi = args.slope_range
    in_range = lo <= table.fitted_slope <= hi
    sys.stdout.write(f"fitted_slope = {_fmt(table.fitted_slope)}\n"
                     f"slope_ci = {_fmt(table.slope_ci[0])},{_fmt(table.slope_ci[1])}\n"
                     f"slope_in_range = {in_range}\n")
    for r in table.excluded:
        sys.stdout.write(f"excluded N = {r.N} (bound {_fmt(r.bound)})\n")
    return EXIT_FAIL if args.check and not in_range else EXIT_OK


# ---------------------------------------------------------------- parser

def _add_common(p, mc=False, sim=False, density=True):
    p.add_argument("--out", default=DEFAULT_OUT, help="output directory (default %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="random seed (generated if absent)")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--config", default=None, help="INI file with defaults for any flag")
    if density:
        p.add_argument("--family", default=None, help="built-in density family")
        p.add_argument("--param", action="append", default=[],
                       help="family parameter key=value (repeatable)")
        p.add_argument("--density-csv", default=None, help="tabulated density (x, p) CSV")
        p.add_argument("--numeric", action="store_true",
                       help="construct the coefficient numerically")
    if mc:
        p.add_argument("--samples", type=int, default=100_000)
        p.add_argument("--inner-samples", type=int, default=0,
                       help="inner Monte Carlo draws (0 = exact when available)")
        p.add_argument("--quad-nodes", type=int, default=64)
        p.add_argument("--bins", type=int, default=64)
    if sim:
        p.add_argument("--dt", type=float, default=1e-3)
        p.add_argument("--horizon", type=float, default=1e4)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="steindiff", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"steindiff {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("density", help="inspect or tabulate a density")
    _add_common(p)
    p.add_argument("--x", default=None, help="comma-separated evaluation points")
    p.add_argument("--points", type=int, default=201)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("build", help="construct, validate and export coefficients")
    _add_common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("stein", help="solve the Stein equation for a test function")
    _add_common(p)
    p.add_argument("--f", default="ramp", help="ramp, bump, identity or const")
    p.add_argument("--no-constants", action="store_true", help="skip norm-constant estimation")
    p.set_defaults(func=cmd_stein)

    p = sub.add_parser("bound", help="Monte Carlo Stein bounds for a Gaussian functional")
    _add_common(p, mc=True)
    p.add_argument("--functional", default=None, help="registered functional name")
    p.add_argument("--fparam", action="append", default=[],
                   help="functional parameter key=value (repeatable)")
    p.add_argument("--functional-config", default=None, help="INI file with [functional]")
    p.add_argument("--unconditional-only", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", help="simulate paths and check the occupation measure")
    _add_common(p, sim=True)
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--scheme", choices=("euler", "milstein"), default="euler")
    p.add_argument("--boundary", choices=("reflect", "clip"), default="reflect")
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--check-against", default=None,
                   help="compare with another family's cdf instead of the model's")
    p.add_argument("--ks-max", type=float, default=None, help="fail if K-S exceeds this")
    p.add_argument("--path-csv", action="store_true", help="dump (t, x) to path.csv")
    p.add_argument("--path-stride", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the worked identity examples")
    _add_common(p, mc=True, density=False)
    p.add_argument("--example", default="all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rate", help="bound decay for normalized log-products")
    _add_common(p, mc=True, density=False)
    p.add_argument("--n", default="4,8,16,32,64,128,256", help="comma-separated N values")
    p.add_argument("--slope-range", type=float, nargs=2, default=(-0.7, -0.3))
    p.add_argument("--check", action="store_true", help="fail if the slope is out of range")
    p.set_defaults(func=cmd_rate)
    return ap


def _apply_config(parser, argv):
    """Feed INI values (sections ``common`` and the command name) in as defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise UsageError(f"cannot read config {known.config}")
    command = next((a for a in argv if not a.startswith("-") and a in _subparsers(parser)), None)
    if command is None:
        return
    if cp.has_section("meta") and not cp.has_section(command):
        sections = ", ".join(x for x in cp.sections() if x != "meta")
        raise UsageError(f"{known.config} records a `{sections}` run, not `{command}`")
    sp = _subparsers(parser)[command]
    dests = {a.dest: a for a in sp._actions}
    values = {}
    for sec in ("common", command):
        if cp.has_section(sec):
            values.update(cp[sec])
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("config", "func"):
            continue
        act = dests[dest]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[dest] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(act, argparse._AppendAction):
            defaults[dest] = [v for v in raw.split(";") if v.strip()]
        elif act.nargs not in (None, "?"):
            defaults[dest] = [act.type(v) if act.type else v for v in raw.split()]
        elif raw == "None":
            defaults[dest] = None
        else:
            defaults[dest] = act.type(raw) if act.type else raw
    sp.set_defaults(**defaults)


def _subparsers(parser):
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices
    return {}


def _record(args, out: Path, argv) -> None:
    cp = configparser.ConfigParser()
    vals = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "command", "config"):
            continue
        if isinstance(v, list):
            v = ";".join(str(x) for x in v) if k in ("param", "fparam") else " ".join(
                str(x) for x in v)
        elif isinstance(v, tuple):
            v = " ".join(str(x) for x in v)
        vals[k] = _fmt(v)
    cp[args.command] = vals
    cp["meta"] = {"argv": " ".join(argv), "version": __version__}
    with open(out / "run.ini", "w") as fh:
        cp.write(fh)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except UsageError as exc:
        sys.stderr.write(f"steindiff: error: {exc}\n")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.seed is None:
        args.seed = streams.fresh_seed()
    if args.threads < 1:
        sys.stderr.write("steindiff: error: --threads must be positive\n")
        return EXIT_USAGE
    os.environ.setdefault("NUMBA_NUM_THREADS", str(args.threads))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _record(args, out, argv)
        sys.stdout.write(f"seed = {args.seed}\n")
        return args.func(args, out)
    except (UsageError, FileNotFoundError) as exc:
        sys.stderr.write(f"steindiff: error: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        # package errors that are also ValueErrors describe bad input
        kind = type(exc).__name__ if isinstance(exc, SteinDiffError) else "error"
        sys.stderr.write(f"steindiff: {kind}: {exc}\n")
        return EXIT_USAGE
    except SteinDiffError as exc:
        sys.stderr.write(f"steindiff: {type(exc).__name__}: {exc}\n")
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
