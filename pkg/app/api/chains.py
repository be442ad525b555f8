from typing import List

from fastapi import APIRouter, HTTPException

from app.core.errors import GMCError
from app.models.schemas import (
    CheckRequest,
    CheckResponse,
    CompareRequest,
    CompareResponse,
    KernelOut,
    SolveRequest,
    SolveResponse,
    StrategyRow,
    TrialOut,
)
from app.services import chain_service
from app.services.baselines import tree_from_nested
from app.services.codegen import plan_to_ir
from app.services.parser import parse_problem

router = APIRouter(tags=["chains"])


def _http_error(exc: GMCError) -> HTTPException:
    return HTTPException(status_code=exc.http_status, detail=exc.message)


@router.post("/solve", response_model=SolveResponse)
async def solve_chain(request: SolveRequest):
    """Compute the cheapest kernel plan for a problem."""
    try:
        problem = parse_problem(request.problem, "<request>")
        registry = chain_service.get_registry(text=request.registry, allow_files=False)
        metric = chain_service.get_metric(request.metric, allow_files=False)
        result = chain_service.solve_problem(problem, registry, metric, request.format)
    except GMCError as exc:
        raise _http_error(exc)
    return SolveResponse(
        target=result.plan.target,
        total_cost=str(result.plan.total_cost),
        format=result.format,
        output=result.output,
        plan=plan_to_ir(result.plan),
    )


@router.post("/compare", response_model=CompareResponse)
async def compare_chain(request: CompareRequest):
    """Optimal cost next to the baseline strategies."""
    try:
        problem = parse_problem(request.problem, "<request>")
        forced = None
        if request.tree is not None:
            forced = tree_from_nested(request.tree, len(problem.assignment))
        rows = chain_service.compare_problem(
            problem,
            chain_service.get_registry(text=request.registry, allow_files=False),
            chain_service.get_metric(request.metric, allow_files=False),
            forced,
        )
    except GMCError as exc:
        raise _http_error(exc)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))

    names = [str(f) for f in problem.assignment.factors]
    best = rows[0].cost if rows[0].solved else None
    return CompareResponse(
        target=problem.assignment.target,
        rows=[
            StrategyRow(
                strategy=row.name,
                cost=str(row.cost) if row.solved else None,
                ratio=chain_service.strategy_ratio(row, best),
                tree=row.tree.render(names, " ") if row.tree is not None else None,
                error=row.error,
            )
            for row in rows
        ],
    )


@router.post("/check", response_model=CheckResponse)
async def check_chain(request: CheckRequest):
    """Run the plan against naive evaluation on random instances."""
    try:
        problem = parse_problem(request.problem, "<request>")
        report = chain_service.check_problem(
            problem,
            chain_service.get_registry(text=request.registry, allow_files=False),
            seed=request.seed,
            trials=request.trials,
        )
    except GMCError as exc:
        raise _http_error(exc)
    return CheckResponse(
        passed=report.passed,
        tolerance=report.tolerance,
        max_relative_error=report.max_relative_error,
        trials=[
            TrialOut(seed=t.seed, relative_error=t.relative_error, error=t.error)
            for t in report.trials
        ],
    )


@router.get("/kernels", response_model=List[KernelOut])
async def list_kernels():
    """Kernels of the configured registry, in declaration order."""
    try:
        registry = chain_service.get_registry()
    except GMCError as exc:
        raise _http_error(exc)
    return chain_service.describe_kernels(registry)
