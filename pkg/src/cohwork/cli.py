"""Command-line entry point: ``cohwork run|preset|validate|oracle-check``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, fcs, ising, sweep
from .errors import CapacityError, ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_IO = 4
EXIT_ORACLE = 5

ORACLE_TOL = 1e-9


def random_spec(rng, N=None):
    """Random admissible spec over the ranges used by the oracle check.

    Temperatures are drawn log-uniformly from [0.01, 100].
    """
    lambda0 = rng.uniform(0.0, 3.0)
    delta = rng.uniform(max(-0.5, -lambda0), 1.0)
    if N is None:
        N = 2 * int(rng.integers(1, 11))
    return ising.IsingQuenchSpec(N=N, lambda0=lambda0, delta_lambda=delta,
                                 T=float(10 ** rng.uniform(-2, 2)), p=rng.uniform(0, 1),
                                 phi=rng.uniform(0, 2 * math.pi))


def oracle_check(trials=200, seed=0):
    """Largest atom-wise deviation between the closed-form mode distribution
    and the dense four-level oracle over ``trials`` random (spec, k) draws."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        spec = random_spec(rng)
        k = float(rng.choice(ising.mode_grid(spec.N)))
        closed = ising.mode_quasidistribution(spec, k).to_distribution()
        dense = fcs.quasidistribution(*ising.oracle_mode_system(spec, k))
        worst = max(worst, fcs.atomwise_deviation(closed, dense))
    return worst


def _emit_tables(tables, path, fmt):
    paths = sweep.table_paths(path, tables)
    for name, table in tables.items():
        target = paths[name]
        if target is None and len(tables) > 1:
            sys.stdout.write(f"# {name}\n")
        sweep.emit(table, target, fmt)
        if target is not None:
            print(f"wrote {name} table ({len(table.rows)} rows) to {target}", file=sys.stderr)


def _run(configs, out, fmt):
    tables = sweep.run_experiment(configs)
    _emit_tables(tables, out, fmt)


def cmd_run(args):
    config = sweep.parse_config(Path(args.config).read_text(encoding="utf-8"))
    out = args.out if args.out is not None else config.output_path
    fmt = args.format or config.format
    _run(config, out, fmt)
    return EXIT_OK


def cmd_preset(args):
    configs = sweep.expand_preset(args.name)
    _run(configs, args.out, args.format or "csv")
    return EXIT_OK


def cmd_validate(args):
    config = sweep.parse_config(Path(args.config).read_text(encoding="utf-8"))
    n = len(config.points())
    axes = ", ".join(f"{name}[{len(v)}]" for name, v in config.sweep) or "none"
    print(f"ok: engine={config.engine} N={config.N} sweep axes: {axes}; "
          f"{n} point(s); outputs: {', '.join(config.outputs)}")
    return EXIT_OK


def cmd_oracle_check(args):
    worst = oracle_check(args.trials, args.seed)
    status = "PASS" if worst <= ORACLE_TOL else "FAIL"
    print(f"{status}: max atom-wise deviation {worst:.3e} over {args.trials} trials "
          f"(seed {args.seed}, tolerance {ORACLE_TOL:.0e})")
    return EXIT_OK if worst <= ORACLE_TOL else EXIT_ORACLE


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cohwork",
        description="Work statistics of coherently prepared quenched Ising chains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a JSON experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="output path (default: config output_path or stdout)")
    p.add_argument("--format", choices=sweep.FORMATS)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a figure preset")
    p.add_argument("name", choices=list(sweep.PRESETS))
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=sweep.FORMATS)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle-check",
                       help="compare closed-form mode distributions with the dense engine")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity refused: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
