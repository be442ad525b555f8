"""Reference strategies the solver is compared against.

Trees are full binary trees over leaf indices; ``plan_for_tree`` turns any of
them into a kernel plan using the same temporary semantics as the solver, so
costs of forced trees and of the optimal plan are directly comparable.
"""
import functools
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from app.core import config
from app.core.errors import (
    ChainTooLong,
    GMCSyntaxError,
    NoMatch,
    TooShort,
    Unsolvable,
    UnsolvableError,
)
from app.models.expr import Chain, Product, leaf
from app.services.costs import CostMetric, CostValue, FlopMetric
from app.services.kernels import Registry, best_match
from app.services.parser import tokenize
from app.services.solver import (
    DPTables,
    Plan,
    PlanBuilder,
    TableEntry,
    as_expr,
    construct_solution,
    create_tmp,
    solve,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParenTree:
    """Full binary tree over the contiguous leaf range lo..hi."""

    lo: int
    hi: int
    left: Optional["ParenTree"] = None
    right: Optional["ParenTree"] = None

    @classmethod
    def leaf(cls, index: int) -> "ParenTree":
        return cls(index, index)

    @classmethod
    def join(cls, left: "ParenTree", right: "ParenTree") -> "ParenTree":
        if left.hi + 1 != right.lo:
            raise ValueError(f"subtrees {left} and {right} are not adjacent")
        return cls(left.lo, right.hi, left, right)

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def split(self) -> Optional[int]:
        return None if self.is_leaf else self.left.hi

    def internal_nodes(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + self.left.internal_nodes() + self.right.internal_nodes()

    def leaves(self) -> list[int]:
        if self.is_leaf:
            return [self.lo]
        return self.left.leaves() + self.right.leaves()

    def render(self, names: Optional[Sequence[str]] = None, sep: str = "") -> str:
        """``(((AB)C)D)E`` style; leaves default to A, B, C, ..."""
        if names is None:
            names = [chr(ord("A") + i) if i < 26 else f"M{i}" for i in range(self.hi + 1)]
        if self.is_leaf:
            return names[self.lo]

        def wrap(tree: ParenTree) -> str:
            text = tree.render(names, sep)
            return text if tree.is_leaf else f"({text})"

        return f"{wrap(self.left)}{sep}{wrap(self.right)}"

    def __str__(self) -> str:
        return self.render()


def left_deep(n: int, lo: int = 0) -> ParenTree:
    tree = ParenTree.leaf(lo)
    for index in range(lo + 1, lo + n):
        tree = ParenTree.join(tree, ParenTree.leaf(index))
    return tree


def enumerate_trees(lo: int, hi: int) -> Iterator[ParenTree]:
    """Every parenthesization of lo..hi; Catalan(hi - lo) of them."""
    if lo == hi:
        yield ParenTree.leaf(lo)
        return
    for k in range(lo, hi):
        for left in enumerate_trees(lo, k):
            for right in enumerate_trees(k + 1, hi):
                yield ParenTree(lo, hi, left, right)


def tree_from_solution(tables: DPTables, i: int = 0, j: Optional[int] = None) -> ParenTree:
    j = tables.n - 1 if j is None else j
    if i == j:
        return ParenTree.leaf(i)
    k = tables.solution[i][j]
    return ParenTree(i, j, tree_from_solution(tables, i, k), tree_from_solution(tables, k + 1, j))


def _classic_step(sizes: Sequence[int], i: int, k: int, j: int) -> int:
    return 2 * sizes[i] * sizes[k + 1] * sizes[j + 1]


def classic_mc(sizes: Sequence[int]) -> tuple[int, ParenTree]:
    """Textbook matrix chain DP on plain GEMM costs."""
    n = len(sizes) - 1
    if n < 2:
        raise TooShort(f"a chain needs at least two matrices, got {max(n, 0)}")
    if any(size < 1 for size in sizes):
        raise ValueError(f"sizes must be positive: {list(sizes)}")

    costs = [[0] * n for _ in range(n)]
    solution = [[0] * n for _ in range(n)]
    for length in range(1, n):
        for i in range(n - length):
            j = i + length
            costs[i][j] = None
            for k in range(i, j):
                cost = costs[i][k] + costs[k + 1][j] + _classic_step(sizes, i, k, j)
                if costs[i][j] is None or cost < costs[i][j]:
                    costs[i][j] = cost
                    solution[i][j] = k

    def build(i: int, j: int) -> ParenTree:
        if i == j:
            return ParenTree.leaf(i)
        k = solution[i][j]
        return ParenTree(i, j, build(i, k), build(k + 1, j))

    return costs[0][n - 1], build(0, n - 1)


def classic_tree_cost(sizes: Sequence[int], tree: ParenTree) -> int:
    """GEMM FLOPs of a fixed parenthesization."""
    if tree.is_leaf:
        return 0
    return (
        classic_tree_cost(sizes, tree.left)
        + classic_tree_cost(sizes, tree.right)
        + _classic_step(sizes, tree.lo, tree.split, tree.hi)
    )


def _check_tree(chain: Chain, tree: ParenTree):
    if (tree.lo, tree.hi) != (0, len(chain) - 1):
        raise ValueError(f"tree {tree} does not cover a chain of length {len(chain)}")


def plan_for_tree(
    chain: Chain, tree: ParenTree, registry: Registry, metric: Optional[CostMetric] = None
) -> Plan:
    """Plan computing ``chain`` along ``tree``; raises Unsolvable if a node has no kernel."""
    metric = metric or FlopMetric()
    _check_tree(chain, tree)
    builder = PlanBuilder(chain, metric)

    def visit(node: ParenTree) -> tuple[TableEntry, str]:
        if node.is_leaf:
            factor = chain.factors[node.lo]
            return leaf(factor), factor.operand.name
        left, left_name = visit(node.left)
        right, right_name = visit(node.right)
        expr = Product(as_expr(left), as_expr(right))
        try:
            kernel, binding, cost = best_match(expr, registry, metric)
        except NoMatch as exc:
            raise Unsolvable(
                f"tree {tree.render([str(f) for f in chain.factors], ' ')} is not computable: "
                f"{exc.message}"
            ) from exc
        final = node is tree
        name = builder.emit(kernel, binding, cost, left_name, right_name, final)
        return create_tmp(expr, name), name

    _, result = visit(tree)
    return builder.build(result)


def tree_cost(
    chain: Chain, tree: ParenTree, registry: Registry, metric: Optional[CostMetric] = None
) -> CostValue:
    return plan_for_tree(chain, tree, registry, metric).total_cost


def left_to_right(chain: Chain, registry: Registry, metric: Optional[CostMetric] = None) -> Plan:
    return plan_for_tree(chain, left_deep(len(chain)), registry, metric)


def armadillo_heuristic(chain: Chain) -> ParenTree:
    """Size-driven heuristic on blocks of at most four factors.

    Two factors are multiplied directly. For three, (AB)C is used unless BC
    has fewer elements than AB. For four, (ABC)D is used when ABC has fewer
    elements than BCD, otherwise A(BCD), and the three-factor rule arranges
    the inner block. Longer chains are folded from the left: the first four
    factors form a block, which then acts as a single factor grouped with up
    to three following ones, and so on.
    """
    n = len(chain)
    if n < 2:
        raise TooShort(f"a chain needs at least two factors, got {n}")
    sizes = chain.sizes
    items = [ParenTree.leaf(i) for i in range(n)]
    tree = _arrange(items[:4], sizes)
    rest = items[4:]
    while rest:
        tree = _arrange([tree] + rest[:3], sizes)
        rest = rest[3:]
    return tree


def _elements(items: Sequence[ParenTree], sizes: Sequence[int]) -> int:
    return sizes[items[0].lo] * sizes[items[-1].hi + 1]


def _arrange(items: list[ParenTree], sizes: Sequence[int]) -> ParenTree:
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return ParenTree.join(items[0], items[1])
    if len(items) == 3:
        if _elements(items[1:], sizes) < _elements(items[:2], sizes):
            return ParenTree.join(items[0], _arrange(items[1:], sizes))
        return ParenTree.join(_arrange(items[:2], sizes), items[2])
    if _elements(items[:3], sizes) < _elements(items[1:], sizes):
        return ParenTree.join(_arrange(items[:3], sizes), items[3])
    return ParenTree.join(items[0], _arrange(items[1:], sizes))


def brute_force_optimal(
    chain: Chain, registry: Registry, metric: Optional[CostMetric] = None
) -> tuple[CostValue, ParenTree]:
    """Cheapest tree found by trying all of them."""
    metric = metric or FlopMetric()
    n = len(chain)
    if n > config.BRUTE_FORCE_LIMIT:
        raise ChainTooLong(
            f"brute force is limited to {config.BRUTE_FORCE_LIMIT} factors, got {n}"
        )

    @functools.lru_cache(maxsize=None)
    def evaluate(node: ParenTree) -> Optional[tuple[CostValue, TableEntry]]:
        if node.is_leaf:
            return metric.zero(), leaf(chain.factors[node.lo])
        left, right = evaluate(node.left), evaluate(node.right)
        if left is None or right is None:
            return None
        expr = Product(as_expr(left[1]), as_expr(right[1]))
        try:
            _, _, cost = best_match(expr, registry, metric)
        except NoMatch:
            return None
        return left[0] + right[0] + cost, create_tmp(expr, f"T_{node.lo}_{node.hi}")

    best: Optional[tuple[CostValue, ParenTree]] = None
    count = 0
    for tree in enumerate_trees(0, n - 1):
        count += 1
        result = evaluate(tree)
        if result is not None and (best is None or result[0] < best[0]):
            best = (result[0], tree)
    logger.debug("Brute force over %d trees for %s", count, chain)
    if best is None:
        raise Unsolvable(f"none of the {count} parenthesizations of {chain} is computable")
    return best


def parse_tree(text: str, chain: Chain) -> ParenTree:
    """Read a forced parenthesization such as ``((A*B)*(C*D))*E``.

    Leaves must name the chain's operands in order; ``*`` is optional and
    modifiers may be repeated but are not interpreted.
    """
    tokens = tokenize(text)
    pos = 0
    next_leaf = 0

    def error(message: str) -> GMCSyntaxError:
        return GMCSyntaxError(1, tokens[pos].col, message, "--tree")

    def term() -> ParenTree:
        nonlocal pos, next_leaf
        token = tokens[pos]
        if token.kind == "LPAREN":
            pos += 1
            node = sequence()
            if tokens[pos].kind != "RPAREN":
                raise error("expected ')'")
            pos += 1
        elif token.kind == "IDENT":
            if next_leaf >= len(chain):
                raise error(f"too many operands: {token.text}")
            expected = chain.factors[next_leaf].operand.name
            if token.text != expected:
                raise error(f"expected operand {expected}, found {token.text}")
            node = ParenTree.leaf(next_leaf)
            next_leaf += 1
            pos += 1
        else:
            raise error(f"unexpected {token.text or 'end of input'!r}")
        while tokens[pos].kind == "MOD":
            pos += 1
        return node

    def sequence() -> ParenTree:
        nonlocal pos
        node = term()
        while tokens[pos].kind in ("IDENT", "LPAREN", "STAR"):
            if tokens[pos].kind == "STAR":
                pos += 1
            node = ParenTree.join(node, term())
        return node

    tree = sequence()
    if tokens[pos].kind != "END":
        raise error(f"unexpected {tokens[pos].text!r}")
    if next_leaf != len(chain):
        raise error(f"tree names {next_leaf} operands, chain has {len(chain)}")
    return tree


def tree_from_nested(spec, n: int) -> ParenTree:
    """Build a tree from nested index pairs such as ``[[[0, 1], [2, 3]], 4]``."""

    def build(node) -> ParenTree:
        if isinstance(node, int) and not isinstance(node, bool):
            if not 0 <= node < n:
                raise ValueError(f"leaf index {node} outside 0..{n - 1}")
            return ParenTree.leaf(node)
        if isinstance(node, (list, tuple)) and len(node) == 2:
            return ParenTree.join(build(node[0]), build(node[1]))
        raise ValueError(f"tree nodes must be indices or pairs, got {node!r}")

    tree = build(spec)
    if (tree.lo, tree.hi) != (0, n - 1):
        raise ValueError(f"tree covers {tree.lo}..{tree.hi}, chain has {n} factors")
    return tree


@dataclass(frozen=True)
class StrategyResult:
    name: str
    cost: Optional[CostValue]
    tree: Optional[ParenTree] = None
    plan: Optional[Plan] = None
    error: Optional[str] = None

    @property
    def solved(self) -> bool:
        return self.cost is not None


def compare_strategies(
    chain: Chain,
    registry: Registry,
    metric: Optional[CostMetric] = None,
    forced: Optional[ParenTree] = None,
) -> list[StrategyResult]:
    """Cost of the optimal plan next to the baselines; failures become unsolved rows."""
    metric = metric or FlopMetric()
    results = []
    try:
        tables = solve(chain, registry, metric)
        plan = construct_solution(tables)
        results.append(StrategyResult("gmc", plan.total_cost, tree_from_solution(tables), plan))
    except UnsolvableError as exc:
        results.append(StrategyResult("gmc", None, error=exc.message))

    trees = [
        ("classic-mc", lambda: classic_mc(chain.sizes)[1]),
        ("left-to-right", lambda: left_deep(len(chain))),
        ("armadillo", lambda: armadillo_heuristic(chain)),
    ]
    if forced is not None:
        trees.append(("forced", lambda: forced))
    for name, make_tree in trees:
        tree = make_tree()
        try:
            plan = plan_for_tree(chain, tree, registry, metric)
        except UnsolvableError as exc:
            results.append(StrategyResult(name, None, tree, error=exc.message))
            continue
        results.append(StrategyResult(name, plan.total_cost, tree, plan))
    return results
