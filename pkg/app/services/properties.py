"""Symbolic inference of matrix properties on expression trees.

Properties are propagated bottom-up: leaves carry their declared (closed)
property sets, modifiers map them through the transpose/inverse tables and
products keep what all factors share. Symmetry of a product is decided on its
flattened factor list, so the result never depends on how a sub-chain was
parenthesized.
"""
import functools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from app.models.expr import (
    Expr,
    Factor,
    Modified,
    Operand,
    OperandRef,
    Product,
    Property,
    Shape,
    TemporaryRef,
    flatten,
    leaf,
    shape_of,
    transpose_factors,
)

LOWER = Property.LOWER_TRIANGULAR
UPPER = Property.UPPER_TRIANGULAR
DIAGONAL = Property.DIAGONAL
SYMMETRIC = Property.SYMMETRIC
SPD = Property.SPD
FULL_RANK = Property.FULL_RANK


@dataclass(frozen=True, eq=False)
class InferenceRuleSet:
    transpose_map: Mapping[Property, Property]
    inverse_map: Mapping[Property, Property]
    implications: Mapping[Property, frozenset]
    # (antecedents, consequence) pairs that need every antecedent.
    conjunctions: tuple = ()
    # Properties kept by a product when every factor has them.
    product_closed: frozenset = field(default_factory=frozenset)


DEFAULT_RULES = InferenceRuleSet(
    transpose_map={
        LOWER: UPPER,
        UPPER: LOWER,
        DIAGONAL: DIAGONAL,
        SYMMETRIC: SYMMETRIC,
        SPD: SPD,
        FULL_RANK: FULL_RANK,
    },
    inverse_map={prop: prop for prop in Property},
    implications={
        DIAGONAL: frozenset({LOWER, UPPER, SYMMETRIC}),
        SPD: frozenset({SYMMETRIC, FULL_RANK}),
    },
    conjunctions=((frozenset({LOWER, UPPER}), DIAGONAL),),
    product_closed=frozenset({LOWER, UPPER, DIAGONAL}),
)


def closure(props: Iterable[Property], rules: InferenceRuleSet = DEFAULT_RULES) -> frozenset:
    result = set(props)
    changed = True
    while changed:
        changed = False
        for prop in list(result):
            implied = rules.implications.get(prop, frozenset()) - result
            if implied:
                result |= implied
                changed = True
        for antecedents, consequence in rules.conjunctions:
            if consequence not in result and antecedents <= result:
                result.add(consequence)
                changed = True
    return frozenset(result)


def make_operand(
    name: str, rows: int, cols: int, properties: Iterable[Property] = ()
) -> Operand:
    """Operand whose property set is closed under implication."""
    return Operand(name, Shape(rows, cols), closure(properties))


def infer_properties(expr: Expr, rules: InferenceRuleSet = DEFAULT_RULES) -> frozenset:
    return _infer(expr, rules)


def has_property(expr: Expr, prop: Property, rules: InferenceRuleSet = DEFAULT_RULES) -> bool:
    return prop in _infer(expr, rules)


def is_lower_triangular(expr: Expr) -> bool:
    return has_property(expr, LOWER)


def is_upper_triangular(expr: Expr) -> bool:
    return has_property(expr, UPPER)


def is_diagonal(expr: Expr) -> bool:
    return has_property(expr, DIAGONAL)


def is_symmetric(expr: Expr) -> bool:
    return has_property(expr, SYMMETRIC)


def is_spd(expr: Expr) -> bool:
    return has_property(expr, SPD)


def is_full_rank(expr: Expr) -> bool:
    return has_property(expr, FULL_RANK)


@functools.lru_cache(maxsize=65536)
def _infer(expr: Expr, rules: InferenceRuleSet) -> frozenset:
    if isinstance(expr, OperandRef):
        return closure(expr.operand.properties, rules)
    if isinstance(expr, TemporaryRef):
        return _infer(expr.temporary.defining_expr, rules)
    if isinstance(expr, Modified):
        return _infer_modified(expr, rules)
    return _infer_product(expr, rules)


def _infer_modified(expr: Modified, rules: InferenceRuleSet) -> frozenset:
    props = _infer(expr.child, rules)
    if expr.mod.inverted:
        if not shape_of(expr.child).is_square:
            return frozenset()
        props = {rules.inverse_map[p] for p in props if p in rules.inverse_map}
    if expr.mod.transposed:
        props = {rules.transpose_map[p] for p in props if p in rules.transpose_map}
    return closure(props, rules)


def _infer_product(expr: Product, rules: InferenceRuleSet) -> frozenset:
    left, right = _infer(expr.left, rules), _infer(expr.right, rules)
    direct = set(left & right & rules.product_closed)

    if FULL_RANK in left and FULL_RANK in right:
        left_shape, right_shape = shape_of(expr.left), shape_of(expr.right)
        tall = left_shape.rows >= left_shape.cols and right_shape.rows >= right_shape.cols
        wide = left_shape.rows <= left_shape.cols and right_shape.rows <= right_shape.cols
        if tall or wide:
            direct.add(FULL_RANK)

    factors = flatten(expr)
    if factors is not None and _is_transpose_palindrome(factors, rules):
        direct.add(SYMMETRIC)
        if _congruence_is_spd(factors, rules):
            direct.add(SPD)
    return closure(direct, rules)


def _canonical(factors: Sequence[Factor], rules: InferenceRuleSet) -> tuple:
    """Factor keys where a symmetric operand equals its own transpose."""
    keys = []
    for factor in factors:
        mod = factor.mod
        if mod.transposed and SYMMETRIC in closure(factor.operand.properties, rules):
            mod = mod.with_transpose()
        keys.append((factor.operand.name, mod))
    return tuple(keys)


def _is_transpose_palindrome(factors: Sequence[Factor], rules: InferenceRuleSet) -> bool:
    return _canonical(factors, rules) == _canonical(transpose_factors(factors), rules)


def _congruence_is_spd(factors: Sequence[Factor], rules: InferenceRuleSet) -> bool:
    """X^T X or X^T S X with S SPD and X of full column rank."""
    half = len(factors) // 2
    outer = factors[len(factors) - half :]
    if len(factors) % 2:
        middle = _factor_properties(factors[half], rules)
        if SPD not in middle:
            return False
    if not outer:
        return False
    for factor in outer:
        shape = factor.shape
        if shape.rows < shape.cols or FULL_RANK not in _factor_properties(factor, rules):
            return False
    return True


def _factor_properties(factor: Factor, rules: InferenceRuleSet) -> frozenset:
    return _infer(leaf(factor), rules)
