import argparse
import sys

import src.kerrloop.const as const
from src.kerrloop.errors import (
    ConfigError,
    InvalidDimensionError,
    NumericalError,
    ParameterError,
)
from src.kerrloop.config import code_version
from src.kerrloop.utils.logger import logger, set_level
from ..cli import command, helper


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file merged over config.json")
    common.add_argument("--profile", choices=const.PROFILES, default="full")
    common.add_argument("--out", help="output directory (default: <output_dir>/<command>)")
    common.add_argument("--workers", type=int, help="worker processes for ensembles and sweeps")
    common.add_argument(
        "--include-controller-drive",
        action="store_true",
        help="also drive the controller with the plant's bias amplitude",
    )
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="kerrloop",
        description=const.HELP_MSG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"kerrloop {code_version()}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    for name in ("openloop-trajectory", "closedloop-trajectory"):
        p = sub.add_parser(name, parents=[common], help="quantum-jump trajectory")
        p.add_argument("--seed", type=int)
        p.add_argument("--t-max", type=float, dest="t_max")
        p.add_argument("--n-traj", type=int, dest="n_traj", help="also average an ensemble")
        if name.startswith("closed"):
            p.add_argument("--phi", type=float)

    p = sub.add_parser("steady-state", parents=[common], help="steady state of one loop")
    p.add_argument("--loop", choices=const.LOOPS, default="open")
    p.add_argument("--phi", type=float)
    p.add_argument("--method", choices=const.STEADY_METHODS)

    for name, grid_help in (
        ("phase-curve", "amplitude grid 'start,stop,count'"),
        ("phi-sweep", "phase grid 'count' or 'start,stop,count' (stop excluded)"),
    ):
        p = sub.add_parser(name, parents=[common], help=name.replace("-", " "))
        p.add_argument("--grid", help=grid_help)
        p.add_argument("--method", choices=const.STEADY_METHODS)

    p = sub.add_parser("regression", parents=[common], help="regression to steady state")
    p.add_argument("--method", choices=const.STEADY_METHODS)
    p.add_argument("--t-max", type=float, dest="t_max")

    p = sub.add_parser("slh-check", parents=[common], help="series-product check")
    p.add_argument("--phi", type=float)

    p = sub.add_parser("spectrum", parents=[common], help="Liouvillian gap")
    p.add_argument("--loop", choices=("open", "static"), default="open")
    p.add_argument("--phi", type=float)
    p.add_argument("--count", type=int, default=20, help="eigenvalues to report")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return const.EXIT_OK if e.code in (0, None) else const.EXIT_CONFIG

    if args.log_level:
        set_level(args.log_level)

    try:
        experiment = helper.load_experiment_config(
            args.config, args.profile, helper.overrides_from_args(args)
        )
        out_dir = helper.resolve_output_dir(args.out, experiment, args.command)
        seed = experiment.trajectory.seed if "trajectory" in args.command else None
        with helper.staged_outputs(out_dir, args.command, experiment, seed) as outputs:
            summary = command.command_map[args.command](args, experiment, outputs)
        logger.info(f"Executed {args.command} with summary:\n{summary}")
        print(f"✅ {args.command} finished, outputs in {out_dir}")
        return const.EXIT_OK
    except (ConfigError, ParameterError, InvalidDimensionError) as e:
        logger.error(f"Invalid configuration for {args.command}: {e}", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return const.EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure in {args.command}: {e}", exc_info=True)
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return const.EXIT_NUMERICAL
