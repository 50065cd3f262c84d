"""Command-line interface: simulate, reconstruct, evaluate, bench.

Exit codes: 0 success, 2 argument/configuration error, 3 data or I/O error,
4 numerical or run failure.
"""

import argparse
import datetime
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .engine import EngineConfig, Engine
from .errors import (BundleError, ConfigurationError, EngineError, NumericalFailure,
                     ValidationError)
from .metrics import MetricReport, evaluate, scan_crop
from .ptyio import Bundle, TraceWriter, read_bundle, read_dataset, write_bundle, write_dataset
from .simkit import SimConfig, overlap_ratio, simulate
from .solver import SolverConfig, run_reference

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
WORKERS_ENV = "PTYGER_WORKERS"


class UsageError(Exception):
    pass


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_run_manifest(path, argv, config, seeds, partition=None, started=None):
    manifest = {
        "command": ["ptyhybrid", *argv],
        "config": config,
        "seeds": seeds,
        "partition": partition,
        "version": __version__,
        "started": started,
        "finished": _now(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args, argv):
    started = _now()
    try:
        config = SimConfig(
            phantom=args.phantom, height=args.object_size[0], width=args.object_size[1],
            probe_size=args.probe_size, spokes=args.spokes, step=args.step,
            jitter=args.jitter, photons=args.photons, poisson=args.poisson,
            seed=args.seed, sigma_frac=args.probe_sigma, chirp=args.probe_chirp,
        )
        if config.step >= config.probe_size:
            raise ConfigurationError(
                f"step {config.step} >= probe size {config.probe_size}: no overlap")
        ds = simulate(config)
    except (ConfigurationError, ValidationError) as err:
        raise UsageError(str(err)) from err
    write_dataset(ds, args.out)
    _write_run_manifest(Path(args.out) / "run.json", argv, {"sim": config.as_dict()},
                        {"seed": config.seed}, started=started)
    print(f"n={len(ds.scan)} overlap={overlap_ratio(config.probe_size, config.step):.4f}")
    return EXIT_OK


# -- reconstruct --------------------------------------------------------------

def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV}={env!r} is not an integer") from None


def _solver_config(args):
    if args.solver == "gd" and args.gd_gamma is None:
        raise UsageError("--solver gd requires --gd-gamma (a constant step length)")
    try:
        return SolverConfig(solver=args.solver, gamma0=args.gamma0, tau=args.tau,
                            t=args.t, max_shrinks=args.max_shrinks, gd_gamma=args.gd_gamma)
    except ConfigurationError as err:
        raise UsageError(str(err)) from err


def cmd_reconstruct(args, argv):
    started = _now()
    workers = _workers(args)
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    solver = _solver_config(args)
    if solver.solver == "gd" and workers != 1:
        raise UsageError("gradient descent runs on a single worker only")
    ds = read_dataset(args.data)
    out = Path(args.out)
    trace_path = Path(args.trace) if args.trace else out.with_name(out.name + ".trace.csv")
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    partition = None
    if solver.solver == "cg":
        try:
            config = EngineConfig(workers=workers, solver=solver,
                                  consistency_check=args.consistency_check)
            engine = Engine(ds, config)
        except ConfigurationError as err:
            raise UsageError(str(err)) from err
        partition = engine.partition.summary()
        with TraceWriter(trace_path, parallel=True) as writer:
            result = engine.run(args.iters, callback=writer)
        psi = result.psi
    else:
        with TraceWriter(trace_path) as writer:
            psi, _ = run_reference(ds, solver, args.iters, callback=writer)
    crop = scan_crop(ds.scan, ds.probe_size)
    resolved = {"solver": solver.as_dict(), "workers": workers, "iters": args.iters,
                "consistency_check": args.consistency_check}
    meta = {"solver": resolved, "crop": [list(crop[0]), list(crop[1])],
            "data": {k: v for k, v in ds.meta.items() if k != "run"}}
    write_bundle(Bundle({"psi": psi.astype(np.complex64)}, meta), out)
    _write_run_manifest(out / "run.json", argv, resolved, {"seed": args.seed},
                        partition, started)
    print(f"iterations={args.iters} workers={workers} trace={trace_path}")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------

def _object_of(bundle, path):
    for name in ("psi", "psi_ref"):
        if name in bundle.arrays:
            return bundle.arrays[name]
    raise BundleError(f"{path}: bundle holds neither psi nor psi_ref")


def cmd_evaluate(args, argv):
    rec_b = read_bundle(args.rec)
    ref_b = read_bundle(args.ref)
    rec = _object_of(rec_b, args.rec)
    ref = ref_b.arrays["psi_ref"] if "psi_ref" in ref_b.arrays else _object_of(ref_b, args.ref)
    if rec.shape != ref.shape:
        raise BundleError(f"shape mismatch: reconstruction {rec.shape} vs reference {ref.shape}")
    if "scan" in ref_b.arrays:
        crop = scan_crop(np.floor(ref_b.arrays["scan"] + 0.5).astype(np.int64),
                         ref_b.arrays["probe"].shape[0])
    elif "crop" in rec_b.meta:
        crop = tuple(tuple(r) for r in rec_b.meta["crop"])
    else:
        crop = ((0, ref.shape[0]), (0, ref.shape[1]))
    report = evaluate(rec, ref, crop, args.channel)
    text = ",".join(MetricReport.COLUMNS) + "\n" + report.csv_row() + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


# -- bench --------------------------------------------------------------------

BENCH_COLUMNS = ("workers", "repeat", "iters", "total_s", "setup_s", "compute_s",
                 "comm_wait_s", "grad_ms", "dir_ms", "ls_ms", "update_ms", "reconcile")


def bench_rows(ds, worker_list, iters, repeat, solver=None):
    """Time ``iters`` engine iterations per worker count, ``repeat`` times each."""
    rows = []
    for P in worker_list:
        for r in range(repeat):
            engine = Engine(ds, EngineConfig(workers=P, solver=solver or SolverConfig()))
            result = engine.run(iters)
            t = result.timing
            parts = t["setup_s"] + t["compute_s"] + t["comm_wait_s"]
            stage = t["stage_mean_ms"]
            rows.append({
                "workers": P, "repeat": r, "iters": iters,
                "total_s": t["total_s"], "setup_s": t["setup_s"],
                "compute_s": t["compute_s"], "comm_wait_s": t["comm_wait_s"],
                "grad_ms": stage["grad"], "dir_ms": stage["dir"],
                "ls_ms": stage["ls"], "update_ms": stage["update"],
                "reconcile": abs(parts - t["total_s"]) / t["total_s"],
            })
    return rows


def format_bench(rows):
    lines = [",".join(BENCH_COLUMNS)]
    for row in rows:
        lines.append(",".join(
            str(row[c]) if isinstance(row[c], int) else f"{row[c]:.6f}"
            for c in BENCH_COLUMNS))
    return "\n".join(lines) + "\n"


def cmd_bench(args, argv):
    started = _now()
    try:
        worker_list = [int(x) for x in args.workers.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--workers must be a comma-separated list, got {args.workers!r}")
    if not worker_list or min(worker_list) < 1:
        raise UsageError("--workers entries must be >= 1")
    if args.iters < 1 or args.repeat < 1:
        raise UsageError("--iters and --repeat must be >= 1")
    ds = read_dataset(args.data)
    try:
        rows = bench_rows(ds, worker_list, args.iters, args.repeat)
    except ConfigurationError as err:
        raise UsageError(str(err)) from err
    text = format_bench(rows)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
        seeds = [{"workers": P, "repeat": r, "seed": args.seed}
                 for P in worker_list for r in range(args.repeat)]
        _write_run_manifest(Path(args.out).with_suffix(".manifest.json"), argv,
                            {"workers": worker_list, "iters": args.iters,
                             "repeat": args.repeat}, seeds, started=started)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="ptyhybrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset bundle")
    p.add_argument("--phantom", choices=("siemens", "disks"), default="siemens")
    p.add_argument("--object-size", type=int, nargs=2, metavar=("H", "W"), default=(256, 256))
    p.add_argument("--probe-size", type=int, default=64)
    p.add_argument("--spokes", type=int, default=32)
    p.add_argument("--probe-sigma", type=float, default=0.25)
    p.add_argument("--probe-chirp", type=float, default=SimConfig.chirp)
    p.add_argument("--step", type=int, default=16)
    p.add_argument("--jitter", type=int, default=2)
    p.add_argument("--photons", type=float, default=1.0)
    p.add_argument("--poisson", action="store_true")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct the object from a dataset bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker count (default: ${WORKERS_ENV} or 1)")
    p.add_argument("--iters", type=int, default=128)
    p.add_argument("--solver", choices=("cg", "gd"), default="cg")
    p.add_argument("--gd-gamma", type=float, default=None)
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--max-shrinks", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--consistency-check", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="compare a reconstruction with a reference")
    p.add_argument("--rec", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--channel", choices=("phase", "amplitude"), default="phase")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time the engine across worker counts")
    p.add_argument("--data", required=True)
    p.add_argument("--workers", default="1,2,4")
    p.add_argument("--iters", type=int, default=8)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except UsageError as err:
        parser.error(str(err))
    except NumericalFailure as err:
        print(f"ptyhybrid: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except EngineError as err:
        print(f"ptyhybrid: run failed: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BundleError, ValidationError, OSError) as err:
        print(f"ptyhybrid: data error: {err}", file=sys.stderr)
        return EXIT_DATA
