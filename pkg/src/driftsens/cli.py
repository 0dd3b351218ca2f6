"""Command-line entry point.

One subcommand per experiment kind, plus ``suite`` (every bundled
configuration) and ``dump-paths``. Exit status: 0 if every check passed,
1 if any check failed or an experiment errored, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .exceptions import ConfigError
from .experiments import KINDS, load_config, preset_paths, run_experiment
from .sde import TimeGrid, simulate_ensemble


def _common(p):
    p.add_argument("--config", type=Path, help="TOML configuration (default: bundled preset)")
    p.add_argument("--seed", type=int, help="override the configured master seed")
    p.add_argument("--out", type=Path, help="report directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads")


def build_parser():
    parser = argparse.ArgumentParser(prog="driftsens", description="Drift sensitivity experiments for SDEs and their transfer operators.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        _common(sub.add_parser(kind, help=f"run a {kind} experiment"))
    suite = sub.add_parser("suite", help="run every bundled configuration")
    _common(suite)
    dump = sub.add_parser("dump-paths", help="simulate the configured ensemble and write a path dump")
    _common(dump)
    dump.add_argument("--increments", action="store_true", help="also store Wiener increments")
    return parser


def _prepare(path, args):
    cfg = load_config(path)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be in [0, 2^64)", "seed")
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, mc=dict(cfg.mc, n_jobs=max(1, args.threads)))
    return cfg


def _report(cfg, result, out):
    status = "PASS" if result.passed else "FAIL"
    print(f"{status} {cfg.kind} ({Path(cfg.source).name}) -> {out}")
    for c in result.checks:
        print(f"  [{'ok' if c.passed else 'xx'}] {c.name}: {c.value:.6g} {c.comparison} {c.threshold:g}")
    if result.error:
        print(f"  error: {result.error}")


def _run_one(path, args, out):
    cfg = _prepare(path, args)
    result = run_experiment(cfg, out)
    _report(cfg, result, out)
    return result.passed


def _dump(args):
    if args.config is None:
        raise ConfigError("dump-paths needs --config", "config")
    cfg = _prepare(args.config, args)
    grid = TimeGrid.from_dt(cfg.t, cfg.dt)
    x0 = np.atleast_1d(np.asarray(cfg.param("x0", [0.0]), dtype=float))
    gamma = cfg.build_field() if cfg.perturbation else None
    ens = simulate_ensemble(cfg.build_model(), cfg.build_domain(), x0, gamma, grid,
                            int(cfg.mc.get("n_paths", 1000)), cfg.seed, cfg.n_jobs)
    out = args.out or Path("paths.bin")
    io.write_paths(out, ens, include_increments=args.increments)
    print(f"wrote {ens.n_paths} paths to {out}")
    return True


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dump-paths":
            ok = _dump(args)
        elif args.command == "suite":
            root = args.out or Path("runs")
            paths = [args.config] if args.config else preset_paths()
            ok = all([_run_one(p, args, root / p.stem) for p in paths])
        else:
            paths = [args.config] if args.config else preset_paths(args.command)
            ok = True
            for p in paths:
                cfg_kind = load_config(p).kind
                if cfg_kind != args.command:
                    raise ConfigError(f"config is a {cfg_kind} experiment, not {args.command}", "kind")
                out = args.out if (args.out and len(paths) == 1) else \
                    (args.out or Path("runs")) / p.stem
                ok = _run_one(p, args, out) and ok
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
