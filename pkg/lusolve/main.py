import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import structlog

from lusolve.artifacts import plot_band, read_trajectory_csv
from lusolve.config import settings
from lusolve.errors import LusolveError
from lusolve.handlers import command_dir, run_command
from lusolve.models import EXIT_CODES, Command, Status
from lusolve.problem import load_problem
from lusolve.utils.logger import setup_logging
from lusolve.utils.version import get_version

# Setup logging
setup_logging()
logger = structlog.get_logger()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lusolve",
        description="Periodic orbits, Dirichlet extremals and asymptotic solutions between lower and upper solutions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_version()}")
    sub = parser.add_subparsers(dest="action", required=True)

    run = sub.add_parser("run", help="run one command on a problem file")
    run.add_argument("command", choices=[c.value for c in Command])
    run.add_argument("problem", type=Path)
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a problem-file entry, e.g. solver.horizon=6")
    run.add_argument("--threads", type=int, default=None, help="worker threads for independent runs")
    run.add_argument("--out", type=Path, default=None, help="output root (default: $LUSOLVE_OUTPUT_ROOT or ./out)")

    plot = sub.add_parser("plot", help="plot t,u,v trajectory CSVs inside a problem's band")
    plot.add_argument("problem", type=Path)
    plot.add_argument("csv", nargs="*", type=Path)
    plot.add_argument("-o", "--output", type=Path, required=True)
    return parser


def _run(args: argparse.Namespace) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise LusolveError(f"--threads must be >= 1, got {args.threads}")
        settings.threads = args.threads
    out_root = args.out or settings.output_root

    problem = load_problem(args.problem, args.overrides)
    command = Command(args.command)
    report = run_command(command, problem, out_root)
    print(f"{report.status.value}: {command_dir(problem, command, out_root) / 'report.json'}")
    if report.error:
        print(report.error, file=sys.stderr)
    return EXIT_CODES[report.status]


def _plot(args: argparse.Namespace) -> int:
    problem = load_problem(args.problem)
    trajectories = []
    for path in args.csv:
        t, u, _ = read_trajectory_csv(path)
        trajectories.append((t, u))
    plot_band(args.output, problem.band, trajectories=trajectories, title=problem.name)
    logger.info("Plot complete", output=str(args.output), trajectories=len(trajectories))
    print(args.output)
    return EXIT_CODES[Status.PASS]


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point; returns the exit status (0 pass, 2 negative verdict, 1 error)."""
    args = build_parser().parse_args(argv)
    logger.info("lusolve starting", action=args.action, version=get_version(), log_level=settings.log_level)
    try:
        return _run(args) if args.action == "run" else _plot(args)
    except LusolveError as exc:
        logger.error("Command aborted", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES[Status.ERROR]


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("lusolve stopped by user")
        sys.exit(130)
    except Exception as e:
        logger.error("Fatal error", error=str(e))
        raise
