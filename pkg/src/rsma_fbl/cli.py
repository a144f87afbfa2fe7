"""Command line entry point: validate, sample-channels, solve, sweep, gains."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import PRESETS, ExperimentSpec, emit, load_result, preset, relative_gain, run_experiment
from .channels import ChannelFileError, load_ensemble, sample_channels, sample_ensemble, save_ensemble
from .model import ConfigError, load_config, validate
from .sca import ScaError
from .strategies import solve

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2
log = logging.getLogger("rsma_fbl")


def _load_valid(path: str):
    return validate(load_config(path))


def cmd_validate(args) -> int:
    cfg = _load_valid(args.config)
    print(f"ok: K={cfg.n_users} M={cfg.n_groups} N_t={cfg.n_tx} strategy={cfg.strategy}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _load_valid(args.config)
    relay = True if args.relay else None
    ens = sample_ensemble(cfg, args.seed, args.count, with_relay=relay)
    save_ensemble(ens, args.out)
    print(f"wrote {len(ens)} realizations to {args.out} (fingerprint {ens.fingerprint[:12]})")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load_valid(args.config)
    if args.channels:
        ens = load_ensemble(args.channels, cfg)
        channels = ens.realizations[args.index]
    else:
        channels = sample_channels(cfg, args.seed)
    try:
        run = solve(channels, cfg)
    except ScaError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    sol = run.solution
    print(f"{run.strategy} ({run.mode}): mmf={sol.mmf!r} theta={sol.theta!r} l_c={sol.l_c} "
          f"iters={sol.iterations} status={sol.status}")
    if args.out:
        Path(args.out).write_text(json.dumps(run.to_dict(), indent=1) + "\n")
    return EXIT_OK if sol.status in ("converged", "zero-power") else EXIT_PARTIAL


def _spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        spec = ExperimentSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = preset(args.preset, desk=not args.full, n_seeds=args.seeds)
    changes = {}
    if args.seeds is not None:
        changes["n_seeds"] = args.seeds
    if args.base_seed is not None:
        changes["base_seed"] = args.base_seed
    if args.blocklengths:
        changes["blocklengths"] = tuple(args.blocklengths)
    if args.strategies:
        changes["strategies"] = tuple(args.strategies)
    if args.modes:
        changes["modes"] = tuple(args.modes)
    if args.snr_db is not None:
        changes["snr_db"] = args.snr_db
    changes["output_dir"] = args.out
    return dataclasses.replace(spec, **changes)


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args).check()

    def progress(done, total):
        log.info("seed %d/%d done", done, total)

    result = run_experiment(spec, workers=args.workers, timing=args.timing, progress=progress)
    for p in emit(result, args.out):
        log.info("wrote %s", p)
    for a in result.aggregates:
        print(f"{a.strategy:7s} {a.mode:7s} l_n={a.l_n:5d} mmf={a.mmf_mean:.4f} +- {a.mmf_se:.4f} "
              f"theta={a.theta_mean:.3f} n={a.n} failed={a.n_failed}")
    if result.n_failed:
        print(f"{result.n_failed} cell(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_gains(args) -> int:
    result = load_result(args.result)
    g = relative_gain(result, args.a, args.b, args.l_n, args.mode)
    print(f"{args.a} over {args.b} ({args.mode}, l_n={args.l_n}): {g!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsma-fbl", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a JSON system config")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sample-channels", help="draw a seeded channel ensemble")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=2024)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--relay", action="store_true", help="also draw relay links")
    s.add_argument("--out", required=True, help="binary file, or .json for text")
    s.set_defaults(func=cmd_sample)

    so = sub.add_parser("solve", help="solve one channel realization")
    so.add_argument("config")
    so.add_argument("--channels", help="ensemble file from sample-channels")
    so.add_argument("--index", type=int, default=0)
    so.add_argument("--seed", type=int, default=0, help="channel seed when no file is given")
    so.add_argument("--out", help="write the solution as JSON")
    so.set_defaults(func=cmd_solve)

    sw = sub.add_parser("sweep", help="Monte-Carlo sweep over seeds, strategies and blocklengths")
    src = sw.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--spec", help="ExperimentSpec JSON")
    sw.add_argument("--full", action="store_true", help="100 seeds and the long blocklength grid instead of the desk-scale preset")
    sw.add_argument("--seeds", type=int)
    sw.add_argument("--base-seed", type=int)
    sw.add_argument("--blocklengths", type=int, nargs="+")
    sw.add_argument("--strategies", nargs="+")
    sw.add_argument("--modes", nargs="+", choices=("fin", "inf", "inf-fin"))
    sw.add_argument("--snr-db", type=float)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--timing", action="store_true", help="fill wall_ms (outputs then differ run to run)")
    sw.add_argument("--out", required=True, help="output directory")
    sw.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gains", help="relative gain between two strategies in a sweep result")
    g.add_argument("result", help="result.json from sweep")
    g.add_argument("--a", required=True)
    g.add_argument("--b", required=True)
    g.add_argument("--l-n", type=int, required=True)
    g.add_argument("--mode", default="fin")
    g.set_defaults(func=cmd_gains)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ChannelFileError, ValueError, KeyError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
