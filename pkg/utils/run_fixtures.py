"""Run the fixture report for every problem file under problems/.

Usage (from project root):
    python -m utils.run_fixtures
    python -m utils.run_fixtures problems/pendulum.toml --out /tmp/lusolve
"""

import argparse
import sys
from pathlib import Path

import structlog

from lusolve.config import settings
from lusolve.errors import LusolveError
from lusolve.handlers import run_command
from lusolve.models import Command, Status
from lusolve.problem import load_problem
from lusolve.utils.logger import setup_logging

setup_logging()
logger = structlog.get_logger()

PROBLEMS_DIR = Path(__file__).resolve().parent.parent / "problems"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="run_fixtures")
    parser.add_argument("problems", nargs="*", type=Path)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args(argv)

    paths = args.problems or sorted(PROBLEMS_DIR.glob("*.toml"))
    out_root = args.out or settings.output_root
    failed = []
    for path in paths:
        try:
            report = run_command(Command.REPORT, load_problem(path), out_root)
        except LusolveError as exc:
            logger.error("Problem file rejected", path=str(path), error=str(exc))
            failed.append(path.name)
            continue
        passed, total = report.outputs.get("passed", 0), report.outputs.get("total", 0)
        print(f"{report.status.value:8s} {passed}/{total}  {path.name}")
        if report.status is not Status.PASS:
            failed.append(path.name)

    logger.info("Fixture run complete", problems=len(paths), failed=failed)
    return 1 if failed else 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        pass
    except Exception as exc:
        logger.error("run_fixtures failed", error=str(exc))
        sys.exit(1)
