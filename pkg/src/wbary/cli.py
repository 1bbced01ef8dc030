"""Command-line front end: dataset generation, solving, evaluation, rendering.

Exit codes are stable: 0 converged / success, 2 iteration cap reached,
3 configuration or usage error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .fileio import (
    load_measure,
    load_measure_csv,
    render_weights,
    save_measure_csv,
    write_pgm,
)
from .lp import (
    SizeCapError,
    OT_VARIABLE_CAP,
    barycenter_objective,
    objective_gap,
    solve_barycenter_lp,
)
from .measures import (
    DiscreteMeasure,
    InstanceError,
    build_instance,
    density,
    generate_nested_ellipses,
    grid_support,
    prune_zero_columns,
)
from .solver import (
    ConfigError,
    NumericFailure,
    RandomPartition,
    SolverConfig,
    TRACE_COLUMNS,
    default_rho,
    load_state,
    save_state,
    solve,
)

EXIT_OK = 0
EXIT_MAX_ITER = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _build_stamp():
    stamp = {"version": __version__, "git": None}
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            stamp["git"] = out.stdout.strip()
    except OSError:
        pass
    return stamp


def _expand_inputs(pattern):
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise UsageError(f"no input files match {pattern!r}")
    return paths


def _parse_selection(text):
    if text == "all":
        return "all"
    if text.startswith("random:"):
        try:
            nb = int(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad selection {text!r}; use all or random:<nb>")
        return RandomPartition(buckets=nb)
    raise UsageError(f"bad selection {text!r}; use all or random:<nb>")


def _default_workers():
    env = os.environ.get("MAM_THREADS")
    if env is None:
        return 1
    try:
        workers = int(env)
    except ValueError:
        raise UsageError(f"MAM_THREADS must be an integer, got {env!r}")
    if workers < 1:
        raise UsageError("MAM_THREADS must be positive")
    return workers


def cmd_generate(args):
    """Write a synthetic nested-ellipse dataset plus a density index."""
    if args.kind != "ellipses":
        raise UsageError(f"unknown dataset kind {args.kind!r}")
    if not 1 <= args.ellipses <= 6:
        raise UsageError("--ellipses must be between 1 and 6")
    if args.side < 8:
        raise UsageError("--side must be at least 8")
    if args.n < 1:
        raise UsageError("--n must be positive")
    os.makedirs(args.out, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(args.n)
    index_rows = []
    for i, seq in enumerate(seeds):
        measure = generate_nested_ellipses(
            args.side, args.ellipses, rng=np.random.default_rng(seq)
        )
        name = f"measure_{i:04d}.pgm"
        write_pgm(os.path.join(args.out, name), render_weights(measure))
        index_rows.append((name, density(measure)))
    with open(os.path.join(args.out, "index.csv"), "w", encoding="ascii") as fh:
        fh.write("file,ellipses,side,density\n")
        for name, dens in index_rows:
            fh.write(f"{name},{args.ellipses},{args.side},{dens:.17g}\n")
    mean_density = float(np.mean([d for _, d in index_rows]))
    print(f"wrote {args.n} measures to {args.out} (mean density {mean_density:.3f})")
    return EXIT_OK


def _load_problem(args):
    paths = _expand_inputs(args.inputs)
    inputs = [load_measure(p, normalize=not getattr(args, "raw", False)) for p in paths]
    if args.support is not None:
        support = load_measure(args.support).support
    else:
        if not all(
            np.array_equal(m.support.atoms, inputs[0].support.atoms) for m in inputs
        ):
            raise UsageError(
                "inputs live on different supports; pass --support explicitly"
            )
        support = inputs[0].support
    instance = build_instance(support, inputs, exponent=args.iota)
    return paths, instance


def cmd_solve(args):
    """Load measures, prune, run the solver, and write the artifacts."""
    paths, instance = _load_problem(args)
    instance, _ = prune_zero_columns(instance)

    if args.gamma is not None:
        gamma = args.gamma
    elif instance.balanced:
        gamma = math.inf
    else:
        masses = instance.masses()
        raise UsageError(
            f"inputs are unbalanced (masses range {masses.min():.6g}.."
            f"{masses.max():.6g}); pass --gamma to allow mass mismatch"
        )
    workers = args.workers if args.workers is not None else _default_workers()
    rho = args.rho if args.rho is not None else default_rho(instance.cost)
    config = SolverConfig(
        rho=rho,
        gamma=gamma,
        tol=args.tol,
        max_iterations=args.max_iter,
        selection=_parse_selection(args.select),
        seed=args.seed,
        workers=workers,
        debug=args.debug,
    )
    if args.shuffle_partition:
        if not isinstance(config.selection, RandomPartition):
            raise UsageError("--shuffle-partition requires --select random:<nb>")
        config = dataclasses.replace(
            config, selection=RandomPartition(config.selection.buckets, shuffle=True)
        )

    theta0 = None
    if args.resume:
        theta0, _ = load_state(args.resume, instance)

    started = time.perf_counter()
    report = solve(instance, config, theta0=theta0, keep_plan=bool(args.checkpoint))
    elapsed = time.perf_counter() - started

    barycenter = DiscreteMeasure(instance.barycenter_support, report.barycenter)
    save_measure_csv(args.out, barycenter)
    if args.trace:
        _write_trace(args.trace, report.trace)
    if args.render:
        write_pgm(args.render, render_weights(barycenter))
    if args.checkpoint:
        save_state(args.checkpoint, report.plan, iteration=report.iterations)

    objective = _try_objective(report.barycenter, instance)
    manifest = {
        "inputs": paths,
        "support": args.support,
        "outputs": {"barycenter": args.out, "trace": args.trace, "render": args.render},
        "config": {
            "rho": config.rho,
            "gamma": None if math.isinf(gamma) else gamma,
            "tol": config.tol,
            "max_iter": config.max_iterations,
            "select": args.select,
            "shuffle_partition": args.shuffle_partition,
            "seed": config.seed,
            "workers": workers,
            "iota": args.iota,
            "stopping_rule": config.stopping_rule,
        },
        "build": _build_stamp(),
        "timing": {"wall_seconds": elapsed, "solver_seconds": report.wall_time},
        "termination": report.termination,
        "iterations": report.iterations,
        "objective": objective,
    }
    with open(args.out + ".manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    print(
        f"{report.termination} after {report.iterations} iterations "
        f"({report.wall_time:.3f}s)"
    )
    return EXIT_OK if report.converged else EXIT_MAX_ITER


def _try_objective(p, instance):
    if not instance.balanced:
        return None
    R = instance.n_atoms
    if any(R * nu.support.n_atoms > OT_VARIABLE_CAP for nu in instance.inputs):
        return None
    return barycenter_objective(p, instance)


def _write_trace(path, trace):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            fh.write(
                f"{int(row[0])},{row[1]:.17g},{row[2]:.17g},"
                f"{row[3]:.17g},{row[4]:.17g},{row[5]:.17g}\n"
            )


def cmd_eval(args):
    """Report the transport objective of a barycenter, and a gap if possible."""
    candidate = load_measure_csv(args.p)
    paths = _expand_inputs(args.inputs)
    inputs = [load_measure(p) for p in paths]
    instance = build_instance(candidate.support, inputs, exponent=args.iota)
    instance, _ = prune_zero_columns(instance)
    objective = barycenter_objective(candidate.weights, instance)
    print(f"objective {objective:.17g}")
    if args.exact:
        exact = load_measure_csv(args.exact)
        gap = objective_gap(candidate.weights, instance, exact.weights)
        print(f"gap {gap:.17g}")
    elif args.oracle:
        value, _, _ = solve_barycenter_lp(instance)
        print(f"gap {objective - value:.17g}")
    return EXIT_OK


def cmd_render(args):
    """Render a grid-supported barycenter CSV as a max-normalized PGM."""
    measure = load_measure_csv(args.p)
    write_pgm(args.out, render_weights(measure))
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wbary",
        description="Exact Wasserstein barycenters of discrete measures on fixed supports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--kind", default="ellipses")
    gen.add_argument("--n", type=int, required=True, help="number of measures")
    gen.add_argument("--ellipses", type=int, default=1, help="annuli per measure (1-6)")
    gen.add_argument("--side", type=int, default=60, help="grid side in pixels")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    slv = sub.add_parser("solve", help="compute a barycenter")
    slv.add_argument("--inputs", required=True, help="glob of measure files")
    slv.add_argument("--support", help="measure CSV providing the barycenter support")
    slv.add_argument("--rho", type=float, default=None, help="prox parameter (default: auto)")
    slv.add_argument("--gamma", type=float, default=None, help="mass-mismatch penalty")
    slv.add_argument("--iota", type=float, default=2.0, help="ground-cost exponent")
    slv.add_argument("--tol", type=float, default=1e-6)
    slv.add_argument("--max-iter", type=int, default=100_000)
    slv.add_argument("--select", default="all", help="all or random:<nb>")
    slv.add_argument("--shuffle-partition", action="store_true")
    slv.add_argument("--seed", type=int, default=0)
    slv.add_argument("--workers", type=int, default=None, help="default: MAM_THREADS or 1")
    slv.add_argument("--trace", help="write per-iteration trace CSV here")
    slv.add_argument("--render", help="also render the barycenter to this PGM")
    slv.add_argument("--resume", help="checkpoint file with an initial plan")
    slv.add_argument("--checkpoint", help="write the final plan state here")
    slv.add_argument("--raw", action="store_true", help="skip input normalization")
    slv.add_argument("--debug", action="store_true", help=argparse.SUPPRESS)
    slv.add_argument("--out", required=True, help="barycenter CSV path")
    slv.set_defaults(func=cmd_solve)

    ev = sub.add_parser("eval", help="evaluate a barycenter against the inputs")
    ev.add_argument("--p", required=True, help="barycenter measure CSV")
    ev.add_argument("--inputs", required=True, help="glob of measure files")
    group = ev.add_mutually_exclusive_group()
    group.add_argument("--exact", help="reference barycenter CSV")
    group.add_argument("--oracle", action="store_true", help="solve the LP for reference")
    ev.add_argument("--iota", type=float, default=2.0)
    ev.set_defaults(func=cmd_eval)

    ren = sub.add_parser("render", help="render a barycenter CSV as a PGM")
    ren.add_argument("--p", required=True)
    ren.add_argument("--out", required=True)
    ren.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, InstanceError, SizeCapError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
