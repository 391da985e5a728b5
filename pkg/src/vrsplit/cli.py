"""Command-line front end: fixtures, experiment configs, and runs.

Three subcommands: ``gen`` writes a problem fixture, ``protocol`` writes the
standard experiment config for a family, ``run`` executes a config and
writes the aggregated CSV tables.  ``run`` exits 0 only if every entry ran;
a failed entry leaves its error in the CSVs and flips the exit code.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import (
    experiment_from_json,
    experiment_to_json,
    paper_protocol_config,
    run_experiment,
)
from .operators import problem_to_json
from .problems import GeneratorSpec, generate

_FAMILIES = ("quadratic", "boyan_saddle", "two_player_game")


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", required=True, choices=_FAMILIES,
                   help="instance family")
    p.add_argument("-n", type=int, default=16, help="number of components")
    p.add_argument("-d", type=int, default=8, help="dimension")
    p.add_argument("--kappa", type=float, default=10.0,
                   help="target condition number (quadratic family)")
    p.add_argument("--lambda-reg", type=float, default=1.0,
                   help="regularization weight (saddle family)")
    p.add_argument("--seed", type=int, default=0, help="generator seed")


def _emit(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        path = Path(out)
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        print(f"wrote {path}")


def _cmd_gen(args) -> int:
    spec = GeneratorSpec(family=args.family, n=args.n, d=args.d,
                         kappa_target=args.kappa, lambda_reg=args.lambda_reg,
                         seed=args.seed)
    _emit(problem_to_json(generate(spec)), args.out)
    return 0


def _cmd_protocol(args) -> int:
    config = paper_protocol_config(
        family=args.family, n=args.n, d=args.d, kappa_target=args.kappa,
        lambda_reg=args.lambda_reg, seed=args.seed,
        gamma="auto" if args.gamma is None else args.gamma,
        replicates=args.replicates, budget=args.budget, out=args.results,
    )
    if args.quick:
        config = replace(config, replicates=3, budget=20)
    _emit(experiment_to_json(config), args.out)
    return 0


def _cmd_run(args) -> int:
    config = experiment_from_json(Path(args.config).read_text())
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out=args.out)
    if args.quick:
        config = replace(config, replicates=3, budget=20)
    result = run_experiment(config, workers=args.workers,
                            include_replicates=args.include_replicates)
    for entry in result.entries:
        print(f"{entry.name}: {entry.status}")
    print(f"wrote {result.combined_path}")
    return 0 if result.ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vrsplit-bench",
        description="benchmark runner for finite-sum splitting schemes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a problem fixture")
    _add_instance_args(p_gen)
    p_gen.add_argument("--out", default="-",
                       help="fixture path ('-' for stdout)")
    p_gen.set_defaults(fn=_cmd_gen)

    p_proto = sub.add_parser(
        "protocol", help="emit the standard experiment config for a family")
    _add_instance_args(p_proto)
    p_proto.add_argument("--gamma", type=float, default=None,
                         help="override every entry's step size")
    p_proto.add_argument("--replicates", type=int, default=10,
                         help="independent runs per entry")
    p_proto.add_argument("--budget", type=int, default=50,
                         help="evaluation budget in multiples of n")
    p_proto.add_argument("--quick", action="store_true",
                         help="3 replicates, budget 20n")
    p_proto.add_argument("--results", default="results",
                         help="output directory the config will point at")
    p_proto.add_argument("--out", default="-",
                         help="config path ('-' for stdout)")
    p_proto.set_defaults(fn=_cmd_protocol)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="experiment config path")
    p_run.add_argument("--workers", type=int, default=1,
                       help="process pool size (output-invariant)")
    p_run.add_argument("--include-replicates", action="store_true",
                       help="add one CSV column per replicate")
    p_run.add_argument("--quick", action="store_true",
                       help="3 replicates, budget 20n")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--out", default=None,
                       help="override the output directory")
    p_run.set_defaults(fn=_cmd_run)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
