"""Dynamic program over symbolic sub-chains and plan reconstruction."""
import functools
import logging
import operator
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from app.core import config
from app.core.errors import NoMatch, Unsolvable, UnsolvableRange
from app.models.expr import (
    Chain,
    Expr,
    Modified,
    Operand,
    Product,
    Temporary,
    TemporaryRef,
    UnaryMod,
    leaf,
    shape_of,
)
from app.services.costs import UNREACHABLE, CostMetric, CostValue, FlopMetric
from app.services.kernels import Binding, Kernel, Registry, best_match, derive_flags
from app.services.properties import infer_properties

logger = logging.getLogger(__name__)

TableEntry = Union[Expr, Temporary]


class NameSupply:
    """Hands out names that collide neither with operands nor with each other."""

    def __init__(self, taken=()):
        self.taken = set(taken)

    def fresh(self, base: str) -> str:
        name, counter = base, 1
        while name in self.taken:
            counter += 1
            name = f"{base}_{counter}"
        self.taken.add(name)
        return name


def expand(expr: Expr) -> Expr:
    """Replace temporaries by their defining expressions."""
    if isinstance(expr, TemporaryRef):
        return expr.temporary.defining_expr
    if isinstance(expr, Modified):
        return Modified(expr.mod, expand(expr.child))
    if isinstance(expr, Product):
        return Product(expand(expr.left), expand(expr.right))
    return expr


def create_tmp(expr: Expr, name: str) -> Temporary:
    defining = expand(expr)
    return Temporary(
        name=name,
        shape=shape_of(defining),
        properties=infer_properties(defining),
        defining_expr=defining,
    )


def as_expr(entry: TableEntry) -> Expr:
    return TemporaryRef(entry) if isinstance(entry, Temporary) else entry


@dataclass(frozen=True)
class CallOperand:
    name: str
    mod: UnaryMod = UnaryMod.NONE

    def __str__(self) -> str:
        return f"{self.name}{self.mod.display_suffix}"


@dataclass(frozen=True)
class KernelCall:
    kernel: str
    routine: str
    pattern: str
    left: CallOperand
    right: CallOperand
    output: str
    rows: int
    cols: int
    roles: Mapping[str, str] = field(default_factory=dict)
    flags: Mapping[str, str] = field(default_factory=dict)
    cost: CostValue = field(default_factory=CostValue)
    overwrites: Optional[str] = None
    template: Optional[str] = None

    @property
    def inputs(self) -> list[str]:
        return list(dict.fromkeys((self.left.name, self.right.name)))

    @property
    def expression(self) -> str:
        return f"{self.left} {self.right}"


@dataclass(frozen=True)
class Plan:
    target: str
    calls: tuple[KernelCall, ...]
    total_cost: CostValue
    result: str
    operands: tuple[Operand, ...] = ()

    def __len__(self) -> int:
        return len(self.calls)


def sum_costs(costs, zero: CostValue) -> CostValue:
    return functools.reduce(operator.add, costs, zero)


class PlanBuilder:
    """Collects kernel calls in dependency order and names their outputs T1, T2, ..."""

    def __init__(self, chain: Chain, metric: CostMetric):
        self.chain = chain
        self.metric = metric
        self.calls: list[KernelCall] = []
        self._names = NameSupply(set(chain.operands) | {chain.target})
        self._counter = 0

    def _fresh(self) -> str:
        while True:
            self._counter += 1
            name = f"T{self._counter}"
            if name not in self._names.taken:
                self._names.taken.add(name)
                return name

    def emit(
        self,
        kernel: Kernel,
        binding: Binding,
        cost: CostValue,
        left_name: str,
        right_name: str,
        final: bool,
    ) -> str:
        output = self.chain.target if final else self._fresh()
        pattern = binding.pattern
        names = {pattern.left_role: left_name, pattern.right_role: right_name}
        if pattern.same_operand:
            names = {pattern.left_role: right_name}
        self.calls.append(
            KernelCall(
                kernel=kernel.name,
                routine=kernel.routine,
                pattern=pattern.text,
                left=CallOperand(left_name, binding.left.mod),
                right=CallOperand(right_name, binding.right.mod),
                output=output,
                rows=binding.m,
                cols=binding.n,
                roles=names,
                flags=derive_flags(kernel, binding),
                cost=cost,
                overwrites=names.get(kernel.overwrites) if kernel.overwrites else None,
                template=kernel.template,
            )
        )
        return output

    def build(self, result: str) -> Plan:
        total = sum_costs((call.cost for call in self.calls), self.metric.zero())
        operands = tuple(dict.fromkeys(f.operand for f in self.chain.factors))
        return Plan(self.chain.target, tuple(self.calls), total, result, operands)


@dataclass
class DPTables:
    chain: Chain
    metric: CostMetric
    tmps: list
    costs: list
    kernels: list
    solution: list
    call_costs: list
    split_evaluations: int = 0
    unmatched: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.chain)

    @property
    def total_cost(self) -> CostValue:
        return self.costs[0][self.n - 1]


def solve(
    chain: Chain,
    registry: Registry,
    metric: Optional[CostMetric] = None,
    hoist_inference: Optional[bool] = None,
) -> DPTables:
    """Fill the DP tables for ``chain``; raises Unsolvable if nothing covers it."""
    metric = metric or FlopMetric()
    hoist = config.HOIST_INFERENCE if hoist_inference is None else hoist_inference
    n = len(chain)
    names = NameSupply(set(chain.operands) | {chain.target})

    tmps: list[list[Optional[TableEntry]]] = [[None] * n for _ in range(n)]
    costs = [[UNREACHABLE] * n for _ in range(n)]
    kernels: list[list[Optional[tuple[Kernel, Binding]]]] = [[None] * n for _ in range(n)]
    solution: list[list[Optional[int]]] = [[None] * n for _ in range(n)]
    call_costs: list[list[Optional[CostValue]]] = [[None] * n for _ in range(n)]
    tables = DPTables(chain, metric, tmps, costs, kernels, solution, call_costs)

    for i, factor in enumerate(chain.factors):
        tmps[i][i] = leaf(factor)
        costs[i][i] = metric.zero()

    for length in range(1, n):
        for i in range(n - length):
            j = i + length
            best_expr: Optional[Expr] = None
            for k in range(i, j):
                tables.split_evaluations += 1
                left, right = tmps[i][k], tmps[k + 1][j]
                if left is None or right is None:
                    continue
                expr = Product(as_expr(left), as_expr(right))
                try:
                    kernel, binding, kernel_cost = best_match(expr, registry, metric)
                except NoMatch:
                    tables.unmatched.append((i, k, j, str(expr)))
                    continue
                cost = costs[i][k] + costs[k + 1][j] + kernel_cost
                if cost < costs[i][j]:
                    costs[i][j] = cost
                    solution[i][j] = k
                    kernels[i][j] = (kernel, binding)
                    call_costs[i][j] = kernel_cost
                    best_expr = expr
                    if not hoist:
                        tmps[i][j] = create_tmp(expr, names.fresh(f"T_{i}_{j}"))
                    logger.debug("costs[%d][%d] := %s via %s at k=%d", i, j, cost, kernel.name, k)
            if hoist and best_expr is not None:
                tmps[i][j] = create_tmp(best_expr, names.fresh(f"T_{i}_{j}"))

    if costs[0][n - 1].unreachable:
        uncovered = sorted({text for _, _, _, text in tables.unmatched})
        raise Unsolvable(
            f"no parenthesization of {chain} is computable; "
            f"no kernel computes: {'; '.join(uncovered) or 'any split'}"
        )
    logger.info(
        "Solved %s: cost %s, %d split evaluations", chain, costs[0][n - 1], tables.split_evaluations
    )
    return tables


def construct_solution(tables: DPTables, i: int = 0, j: Optional[int] = None) -> Plan:
    """Kernel calls computing sub-chain i..j, in post-order."""
    j = tables.n - 1 if j is None else j
    if tables.costs[i][j].unreachable:
        raise UnsolvableRange(f"sub-chain ({i}, {j}) has no computable parenthesization")
    builder = PlanBuilder(tables.chain, tables.metric)
    final = (i, j) == (0, tables.n - 1)
    result = _emit_range(tables, builder, i, j, final)
    return builder.build(result)


def _emit_range(tables: DPTables, builder: PlanBuilder, i: int, j: int, final: bool) -> str:
    if i == j:
        return tables.chain.factors[i].operand.name
    k = tables.solution[i][j]
    left = _emit_range(tables, builder, i, k, False)
    right = _emit_range(tables, builder, k + 1, j, False)
    kernel, binding = tables.kernels[i][j]
    return builder.emit(kernel, binding, tables.call_costs[i][j], left, right, final)


def solve_plan(chain: Chain, registry: Registry, metric: Optional[CostMetric] = None) -> Plan:
    return construct_solution(solve(chain, registry, metric))
