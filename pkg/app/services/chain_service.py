"""Entry points shared by the command line and the HTTP API."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from app.core import config
from app.core.errors import InvalidCostTable
from app.models.expr import Chain
from app.services.baselines import ParenTree, StrategyResult, compare_strategies
from app.services.codegen import EMITTERS
from app.services.costs import CostMetric, CostValue, parse_metric
from app.services.executor import CheckReport, check_plan
from app.services.kernels import Registry, default_registry, load_registry, load_registry_file
from app.services.parser import ProblemFile, parse_problem
from app.services.solver import Plan, construct_solution, solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveResult:
    problem: ProblemFile
    plan: Plan
    output: str
    format: str

    @property
    def chain(self) -> Chain:
        return self.problem.assignment


def get_registry(
    source: Union[str, Path, None] = None,
    text: Optional[str] = None,
    allow_files: bool = True,
) -> Registry:
    """Registry from a file, from inline text, or the configured default."""
    if text is not None:
        return load_registry(text, "<request>", allow_files=allow_files)
    if source is not None:
        return load_registry_file(source)
    return default_registry()


def get_metric(spec: Optional[str] = None, allow_files: bool = True) -> CostMetric:
    if spec and not allow_files and spec.strip().startswith("table:"):
        raise InvalidCostTable("table metrics cannot be selected here")
    return parse_metric(spec or config.METRIC)


def read_problem(path: Union[str, Path]) -> ProblemFile:
    path = Path(path)
    return parse_problem(path.read_text(encoding="utf-8"), str(path))


def solve_problem(
    problem: ProblemFile,
    registry: Registry,
    metric: Optional[CostMetric] = None,
    fmt: str = "text",
) -> SolveResult:
    if fmt not in EMITTERS:
        raise ValueError(f"unknown output format {fmt!r}")
    tables = solve(problem.assignment, registry, metric or get_metric())
    plan = construct_solution(tables)
    return SolveResult(problem, plan, EMITTERS[fmt](plan), fmt)


def strategy_ratio(row: StrategyResult, best: Optional[CostValue]) -> Optional[float]:
    if row.cost is None or best is None or not best.scalar_value:
        return None
    return float(row.cost.scalar_value / best.scalar_value)


def compare_problem(
    problem: ProblemFile,
    registry: Registry,
    metric: Optional[CostMetric] = None,
    forced: Optional[ParenTree] = None,
) -> list[StrategyResult]:
    return compare_strategies(problem.assignment, registry, metric or get_metric(), forced)


def format_comparison(problem: ProblemFile, rows: Sequence[StrategyResult]) -> str:
    chain = problem.assignment
    names = [str(f) for f in chain.factors]
    best = rows[0].cost if rows and rows[0].solved else None
    lines = [f"# {chain}", f"{'strategy':<14} {'cost':>20} {'ratio':>8}  tree"]
    for row in rows:
        tree = row.tree.render(names, " ") if row.tree is not None else "-"
        if row.solved:
            ratio = strategy_ratio(row, best)
            ratio_text = f"{ratio:.3f}" if ratio is not None else "-"
            lines.append(f"{row.name:<14} {str(row.cost):>20} {ratio_text:>8}  {tree}")
        else:
            lines.append(f"{row.name:<14} {'unsolvable':>20} {'-':>8}  {tree}")
    return "\n".join(lines) + "\n"


def check_problem(
    problem: ProblemFile,
    registry: Registry,
    metric: Optional[CostMetric] = None,
    seed: int = 0,
    trials: int = 10,
) -> CheckReport:
    plan = construct_solution(solve(problem.assignment, registry, metric or get_metric()))
    return check_plan(problem.assignment, plan, seed=seed, trials=trials)


def format_check(report: CheckReport) -> str:
    lines = []
    for trial in report.trials:
        if trial.error is not None:
            lines.append(f"seed {trial.seed}: {trial.error}")
        else:
            lines.append(f"seed {trial.seed}: relative error {trial.relative_error:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    max_error = report.max_relative_error
    max_text = f"{max_error:.3e}" if max_error is not None else "n/a"
    lines.append(f"{verdict}: max relative error {max_text} (tolerance {report.tolerance:g})")
    return "\n".join(lines) + "\n"


def describe_kernels(registry: Registry) -> list[dict]:
    return [
        {
            "name": kernel.name,
            "pattern": kernel.describe_pattern(),
            "constraints": ",".join(str(c) for c in kernel.constraints) or None,
            "unit": ",".join(kernel.unit) or None,
            "routine": kernel.routine,
            "cost": str(kernel.cost),
            "template": kernel.template,
        }
        for kernel in registry
    ]


def format_kernels(registry: Registry) -> str:
    lines = []
    for item in describe_kernels(registry):
        constraints = item["constraints"] or "-"
        lines.append(f"{item['name']:<10} {item['pattern']:<32} {constraints:<36} {item['cost']}")
    return "\n".join(lines) + ("\n" if lines else "")
