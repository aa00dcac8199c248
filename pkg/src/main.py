# src/main.py
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, NoReturn, Optional

from src import __version__
from src.config.settings import Settings
from src.core.errors import (
    BudgetExceededError,
    ConvergenceError,
    EncodingFailure,
    InfeasibleProblemError,
    RDPError,
    ValidationError,
)
from src.services.run_service import (
    EXIT_INFEASIBLE,
    EXIT_INPUT,
    EXIT_NOT_CONVERGED,
    FLAVORS,
    RunService,
)
from src.simulation.coding_sim import ENCODERS
from src.utils.logger import get_logger, setup_logging

log = get_logger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1 (input error) instead of argparse's 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, *, problem_default: Optional[str] = None) -> None:
    p.add_argument("--problem", default=problem_default, required=problem_default is None,
                   help="problem JSON (path, or name inside the problems folder)")
    p.add_argument("--out", default=None, help="output file; a .manifest.json is written next to it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdp-workbench", description="Rate-distortion-perception workbench")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--settings", default="settings.json", help="settings file (default: ./settings.json)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one trade-off point, JSON on stdout")
    _common(p)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--pi", type=float, default=1.0)
    p.add_argument("--flavor", choices=FLAVORS, default="empirical")
    p.add_argument("--tol", type=float, default=None, help="constraint tolerance")

    p = sub.add_parser("curve", help="sweep a (delta, pi) grid into CSV")
    _common(p)
    p.add_argument("--grid-delta", default=None, help="a:b:step or comma list")
    p.add_argument("--grid-pi", default=None, help="a:b:step or comma list")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--pi", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=None)

    p = sub.add_parser("simulate", help="Monte Carlo run of the likelihood-encoder scheme")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--r0", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--codebook-seed", type=int, default=None)
    p.add_argument("--encoder", choices=ENCODERS, default=None)
    p.add_argument("--delta", type=float, default=None, help="build the scheme from the solver at this delta")
    p.add_argument("--pi", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=None)

    p = sub.add_parser("softcover", help="soft-covering TV sweep into CSV")
    _common(p, problem_default="binary_bsc_synthesis.json")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--n-list", default="2,4,6,8")
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--rate-list", default="0.2,1.0")
    p.add_argument("--seeds", type=int, default=None, help="number of codebook seeds")
    p.add_argument("--seed", type=int, default=None, help="first codebook seed")

    p = sub.add_parser("converse", help="search small codes against the single-letter rate")
    _common(p)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--messages", "-M", type=int, default=2)
    p.add_argument("--mode", choices=("exhaustive", "sampled"), default="exhaustive")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "curve" and args.grid_delta is None and args.delta is None:
        parser.error("curve needs --grid-delta or --delta")

    Settings.reset()
    settings = Settings.load(Path(args.settings))
    setup_logging(args.log_level or settings.output["log_level"])
    for w in settings.warnings:
        log.warning("settings: %s", w)

    service = RunService(settings)
    handler = getattr(service, args.command)
    try:
        return handler(args)
    except (ValidationError, BudgetExceededError) as ex:
        log.error("%s", ex)
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleProblemError as ex:
        log.error("infeasible: %s", ex)
        print(f"infeasible: {ex}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as ex:
        log.error("not converged: %s", ex)
        return EXIT_NOT_CONVERGED
    except (EncodingFailure, RDPError) as ex:
        log.error("%s", ex)
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
