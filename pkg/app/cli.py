"""Command line front end: ``python -m app solve|compare|check|kernels``."""
import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, TextIO

from app.core import config
from app.core.errors import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, GMCError
from app.core.logging import setup_logging
from app.services import chain_service
from app.services.baselines import parse_tree


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="gmc", description="Compile generalized matrix chains into kernel calls."
    )
    parser.add_argument("--log-level", default=None, help="logging level (default from GMC_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    common = ArgumentParser(add_help=False)
    common.add_argument("--registry", help="kernel registry file (default: embedded registry)")
    common.add_argument("--metric", help="flops, calls, inverses, table:<file> or vector:<a>,<b>")
    common.add_argument("--out", help="write output to this file instead of stdout")

    solve = commands.add_parser("solve", parents=[common], help="compute the optimal plan")
    solve.add_argument("problems", nargs="+", help="problem files")
    solve.add_argument("--format", choices=("text", "blas", "ir"), default="text")
    solve.add_argument("--jobs", type=int, default=4, help="problems solved concurrently")

    compare = commands.add_parser("compare", parents=[common], help="compare with baselines")
    compare.add_argument("problem")
    compare.add_argument("--tree", help='forced parenthesization, e.g. "((A B)(C D)) E"')

    check = commands.add_parser("check", parents=[common], help="verify the plan numerically")
    check.add_argument("problem")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--trials", type=int, default=10)

    commands.add_parser("kernels", parents=[common], help="list registry kernels")
    return parser


def _read_problem(path: str):
    try:
        return chain_service.read_problem(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _registry(args):
    if args.registry and not Path(args.registry).is_file():
        raise UsageError(f"registry file {args.registry} not found")
    return chain_service.get_registry(args.registry)


def _solve_one(path: str, registry, metric, fmt: str) -> tuple[str, int]:
    try:
        result = chain_service.solve_problem(_read_problem(path), registry, metric, fmt)
    except GMCError as exc:
        return f"error: {exc.message}\n", exc.exit_code
    output = result.output
    if fmt == "blas":
        output += f"# total cost: {result.plan.total_cost}\n"
    return output, EXIT_OK


def cmd_solve(args, out: TextIO) -> int:
    registry = _registry(args)
    metric = chain_service.get_metric(args.metric)
    workers = max(1, min(args.jobs, len(args.problems)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(lambda p: _solve_one(p, registry, metric, args.format), args.problems)
        )

    status = EXIT_OK
    for path, (text, code) in zip(args.problems, results):
        if code != EXIT_OK:
            sys.stderr.write(f"{path}: {text}")
            status = status or code
            continue
        if len(args.problems) > 1 and args.format != "ir":
            out.write(f"# {path}\n")
        out.write(text)
    return status


def cmd_compare(args, out: TextIO) -> int:
    problem = _read_problem(args.problem)
    forced = None
    if args.tree:
        forced = parse_tree(args.tree, problem.assignment)
    rows = chain_service.compare_problem(
        problem, _registry(args), chain_service.get_metric(args.metric), forced
    )
    out.write(chain_service.format_comparison(problem, rows))
    return EXIT_OK


def cmd_check(args, out: TextIO) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    problem = _read_problem(args.problem)
    report = chain_service.check_problem(
        problem,
        _registry(args),
        chain_service.get_metric(args.metric),
        seed=args.seed,
        trials=args.trials,
    )
    out.write(chain_service.format_check(report))
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_kernels(args, out: TextIO) -> int:
    out.write(chain_service.format_kernels(_registry(args)))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "check": cmd_check,
    "kernels": cmd_kernels,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or config.LOG_LEVEL)
    out_file = None
    try:
        out = sys.stdout
        if args.out:
            out_file = out = open(args.out, "w", encoding="utf-8")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except GMCError as exc:
        sys.stderr.write(f"error: {exc.message}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    finally:
        if out_file is not None:
            out_file.close()
