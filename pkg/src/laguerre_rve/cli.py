"""Command-line front end: generate RVEs, benchmark the solver, study its
backtracking behaviour, validate the build, and export geometry/statistics.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time

import numpy as np

from . import __version__
from .errors import LaguerreRveError
from .exports import (
    BACKTRACK_COLUMNS,
    BENCH_COLUMNS,
    load_manifest,
    write_diagram_json,
    write_manifest,
    write_obj,
    write_stats_csv,
)
from .geometry import Lattice
from .rve import VolumeSpec, generate_rve, sample_seeds, sample_targets
from .sdot import SolverConfig, damped_newton
from .tessellation import SeedSet
from .validation import run_checks

USAGE_ERROR = 1
SOLVER_ERROR = 2
VALIDATION_ERROR = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this front end reserves 2 for
    solver failures, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="laguerre-rve", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate one RVE and export it")
    gen.add_argument("--n", type=int, help="number of grains")
    gen.add_argument("--lx", type=float, default=1.0)
    gen.add_argument("--ly", type=float, default=1.0)
    gen.add_argument("--lz", type=float, default=1.0)
    gen.add_argument("--dist", choices=["sp", "dp", "lognormal", "file"], default="sp")
    gen.add_argument("--eta", type=float, default=1.0,
                     help="volume percentage error tolerance")
    gen.add_argument("--lloyd", type=int, default=0, metavar="K",
                     help="number of regularization rounds (0 = plain solve)")
    gen.add_argument("--rng-seed", type=int, default=0)
    gen.add_argument("--out", required=True, metavar="PREFIX")
    gen.add_argument("--format", action="append", choices=["json", "obj", "csv"],
                     help="export formats (repeatable; default json and csv)")
    gen.add_argument("--dp-ratio", type=float, default=5.0)
    gen.add_argument("--sigma-log", type=float, default=0.5)
    gen.add_argument("--mu-log", type=float, default=None)
    gen.add_argument("--targets-file", help="target volumes, one per line (dist=file)")
    gen.add_argument("--seeds-file", help="fixed seed positions, three columns")
    gen.add_argument("--max-newton", type=int, default=100)
    gen.add_argument("--max-backtracking", type=int, default=40)
    gen.add_argument("--linear-tol", type=float, default=1e-11)
    gen.add_argument("--warm-start", action="store_true")
    gen.add_argument("--from-manifest", metavar="PATH",
                     help="rerun the configuration stored in a manifest")

    bench = sub.add_parser("bench", help="mean solver run times per instance class")
    bench.add_argument("--sizes", required=True, help="comma-separated grain counts")
    bench.add_argument("--dists", default="sp", help="comma-separated distributions")
    bench.add_argument("--repeats", type=int, default=100)
    bench.add_argument("--eta", type=float, default=1.0)
    bench.add_argument("--rng-seed", type=int, default=0)
    bench.add_argument("--out", required=True, metavar="CSV")

    bt = sub.add_parser("backtrack-study",
                        help="per-iteration backtracking counts across runs")
    bt.add_argument("--n", type=int)
    bt.add_argument("--repeats", type=int, default=10)
    bt.add_argument("--dist", choices=["sp", "dp", "lognormal", "file"],
                    default="lognormal")
    bt.add_argument("--rng-seed", type=int, default=0)
    bt.add_argument("--eta", type=float, default=1.0)
    bt.add_argument("--targets-file")
    bt.add_argument("--seeds-file")
    bt.add_argument("--out", required=True, metavar="CSV")

    val = sub.add_parser("validate", help="run the invariant suites")
    val.add_argument("--level", choices=["quick", "full"], default="quick")

    return parser


def _volume_spec(dist, n, dp_ratio, sigma_log, mu_log, targets):
    if dist == "file":
        if targets is None:
            raise ValueError("--dist file requires --targets-file")
        return VolumeSpec.explicit(targets)
    if n is None:
        raise ValueError("--n is required unless --dist file")
    if dist == "sp":
        return VolumeSpec.sp(n)
    if dist == "dp":
        return VolumeSpec.dp(n, ratio=dp_ratio)
    return VolumeSpec.lognormal(n, sigma=sigma_log, mu=mu_log)


def _generate_config(args) -> dict:
    """Resolve the generate flags into a self-contained config dict (file
    contents embedded, so a manifest replay needs nothing else)."""
    targets = None
    if args.targets_file:
        targets = np.loadtxt(args.targets_file, ndmin=1).tolist()
    seeds = None
    if args.seeds_file:
        seeds = np.loadtxt(args.seeds_file, ndmin=2).tolist()
    n = args.n
    if n is None and targets is not None:
        n = len(targets)
    return {
        "n": n,
        "lx": args.lx,
        "ly": args.ly,
        "lz": args.lz,
        "dist": args.dist,
        "eta": args.eta,
        "lloyd": args.lloyd,
        "rng_seed": args.rng_seed,
        "out": args.out,
        "formats": sorted(set(args.format or ["json", "csv"])),
        "dp_ratio": args.dp_ratio,
        "sigma_log": args.sigma_log,
        "mu_log": args.mu_log,
        "targets": targets,
        "initial_positions": seeds,
        "max_newton": args.max_newton,
        "max_backtracking": args.max_backtracking,
        "linear_tol": args.linear_tol,
        "warm_start": bool(args.warm_start),
        "rve_threads": __import__("os").environ.get("RVE_THREADS", "0"),
    }


def _run_generate(config: dict) -> int:
    t_total = time.perf_counter()
    lat = Lattice(config["lx"], config["ly"], config["lz"])
    spec = _volume_spec(
        config["dist"],
        config["n"],
        config["dp_ratio"],
        config["sigma_log"],
        config["mu_log"],
        config["targets"],
    )
    solver_config = SolverConfig(
        eta=config["eta"],
        max_iterations=config["max_newton"],
        max_backtracking=config["max_backtracking"],
        linear_tol=config["linear_tol"],
    )
    initial = config["initial_positions"]
    try:
        result = generate_rve(
            spec,
            lat,
            config["lloyd"],
            config["eta"],
            config["rng_seed"],
            config=solver_config,
            initial_positions=None if initial is None else np.asarray(initial),
            warm_start=config["warm_start"],
        )
    except LaguerreRveError as exc:
        print(f"generate: solver failed: {exc}", file=sys.stderr)
        return SOLVER_ERROR

    t_export = time.perf_counter()
    prefix = config["out"]
    if "json" in config["formats"]:
        write_diagram_json(f"{prefix}.diagram.json", result.diagram, result.targets)
    if "csv" in config["formats"]:
        write_stats_csv(f"{prefix}.stats.csv", result.diagram, result.targets)
    if "obj" in config["formats"]:
        write_obj(f"{prefix}.obj", result.diagram)
    timings = {
        "pipeline": result.total_time,
        "diagram": sum(r.time_diagram for rep in result.reports for r in rep.iterations),
        "hessian": sum(r.time_hessian for rep in result.reports for r in rep.iterations),
        "linear_solve": sum(r.time_solve for rep in result.reports for r in rep.iterations),
        "export": time.perf_counter() - t_export,
        "total": time.perf_counter() - t_total,
    }
    write_manifest(f"{prefix}.manifest.json", config, timings, result.reports,
                   __version__)
    print(
        f"generate: n={result.diagram.n} converged with max volume error "
        f"{result.final_pct_error:.4g}% (eta {config['eta']}); wrote {prefix}.*"
    )
    return 0


def cmd_generate(args) -> int:
    if args.from_manifest:
        config = load_manifest(args.from_manifest)["config"]
        if args.out:
            config = dict(config, out=args.out)
    else:
        config = _generate_config(args)
    return _run_generate(config)


def _random_solve(dist, n, eta, rng, targets=None, positions=None):
    """One benchmark unit: sample an instance, solve it, return the report
    and the wall time of the solve alone."""
    lat = Lattice(1.0, 1.0, 1.0)
    spec = _volume_spec(dist, n, 5.0, 0.5, None, targets)
    masses = sample_targets(spec, lat, rng)
    if positions is None:
        positions = sample_seeds(spec.n, lat, rng)
    seeds = SeedSet(np.asarray(positions), lattice=lat)
    t0 = time.perf_counter()
    _, report = damped_newton(seeds, masses, None, SolverConfig(eta=eta))
    return report, time.perf_counter() - t0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    dists = [d.strip() for d in args.dists.split(",") if d.strip()]
    rows = []
    for n in sizes:
        for di, dist in enumerate(dists):
            times = []
            iters = []
            backtracks = []
            failures = 0
            for rep in range(args.repeats):
                rng = np.random.default_rng([args.rng_seed, n, di, rep])
                try:
                    report, dt = _random_solve(dist, n, args.eta, rng)
                except LaguerreRveError as exc:
                    print(f"bench: n={n} dist={dist} rep={rep} failed: {exc}",
                          file=sys.stderr)
                    failures += 1
                    continue
                times.append(dt)
                iters.append(report.n_iterations)
                backtracks.append(report.total_backtracking)
            rows.append(
                [
                    n,
                    dist,
                    args.repeats,
                    failures,
                    statistics.fmean(times) if times else "",
                    statistics.median(times) if times else "",
                    statistics.pstdev(times) if len(times) > 1 else 0.0,
                    statistics.fmean(iters) if iters else "",
                    statistics.fmean(backtracks) if backtracks else "",
                ]
            )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        writer.writerows(rows)
    print(f"bench: wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_backtrack_study(args) -> int:
    targets = None
    if args.targets_file:
        targets = np.loadtxt(args.targets_file, ndmin=1).tolist()
    positions = None
    if args.seeds_file:
        positions = np.loadtxt(args.seeds_file, ndmin=2)
    rows = []
    last_backtracking = []
    for run in range(args.repeats):
        rng = np.random.default_rng([args.rng_seed, run])
        try:
            report, _ = _random_solve(
                args.dist, args.n, args.eta, rng, targets, positions
            )
        except LaguerreRveError as exc:
            print(f"backtrack-study: run {run} failed: {exc}", file=sys.stderr)
            continue
        deepest = 0
        for k, rec in enumerate(report.iterations, start=1):
            rows.append([run, k, rec.backtracking_steps])
            if rec.backtracking_steps > 0:
                deepest = k
        last_backtracking.append(deepest)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BACKTRACK_COLUMNS)
        writer.writerows(rows)
    if last_backtracking:
        print(
            "backtrack-study: last iteration with any backtracking = "
            f"{max(last_backtracking)} (over {len(last_backtracking)} runs)"
        )
    return 0


def cmd_validate(args) -> int:
    results = run_checks(args.level)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"validate: FAILED invariant: {failed[0].name}", file=sys.stderr)
        return VALIDATION_ERROR
    print(f"validate: all {len(results)} invariants passed ({args.level})")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "backtrack-study":
            return cmd_backtrack_study(args)
        return cmd_validate(args)
    except (ValueError, OSError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except LaguerreRveError as exc:
        print(f"{parser.prog}: solver failure: {exc}", file=sys.stderr)
        return SOLVER_ERROR


if __name__ == "__main__":
    sys.exit(main())
