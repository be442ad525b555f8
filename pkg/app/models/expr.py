"""Symbolic operands, modifiers, expression trees and chains."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from app.core.errors import (
    ChainTooShort,
    DimensionMismatch,
    IndexOutOfRange,
    InvalidOperand,
    NonSquareInverse,
)

IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Shape:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidOperand(f"shape {self.rows}x{self.cols} must have positive dimensions")

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    @property
    def is_vector(self) -> bool:
        return self.rows == 1 or self.cols == 1

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def transposed(self) -> Shape:
        return Shape(self.cols, self.rows)

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


class Property(str, enum.Enum):
    DIAGONAL = "Diagonal"
    LOWER_TRIANGULAR = "LowerTriangular"
    UPPER_TRIANGULAR = "UpperTriangular"
    SYMMETRIC = "Symmetric"
    SPD = "SPD"
    FULL_RANK = "FullRank"

    @classmethod
    def parse(cls, name: str) -> Optional[Property]:
        for prop in cls:
            if prop.value == name:
                return prop
        return None


# Declaration order, used whenever property sets are printed.
PROPERTY_ORDER = tuple(Property)


def sorted_properties(props: Iterable[Property]) -> list[Property]:
    return sorted(props, key=PROPERTY_ORDER.index)


class UnaryMod(enum.Enum):
    """Modifier applied to a single factor.

    A modifier is the pair (inverted, transposed); inversion and transposition
    commute, so composition is the component-wise xor of the pair.
    """

    NONE = (False, False)
    TRANSPOSE = (False, True)
    INVERSE = (True, False)
    INVERSE_TRANSPOSE = (True, True)

    @property
    def inverted(self) -> bool:
        return self.value[0]

    @property
    def transposed(self) -> bool:
        return self.value[1]

    def compose(self, inner: UnaryMod) -> UnaryMod:
        """The single modifier equal to applying ``inner`` first, then ``self``."""
        return UnaryMod((self.inverted != inner.inverted, self.transposed != inner.transposed))

    def with_transpose(self) -> UnaryMod:
        return UnaryMod.TRANSPOSE.compose(self)

    @property
    def reverses(self) -> bool:
        # (AB)^T and (AB)^-1 reverse the factor order, (AB)^-T does not.
        return self.inverted != self.transposed

    @property
    def source_suffix(self) -> str:
        return _SOURCE_SUFFIX[self]

    @property
    def display_suffix(self) -> str:
        return _DISPLAY_SUFFIX[self]

    @classmethod
    def from_suffix(cls, suffix: str) -> UnaryMod:
        for mod, text in _SOURCE_SUFFIX.items():
            if text == suffix:
                return mod
        raise ValueError(f"unknown modifier suffix {suffix!r}")

    @classmethod
    def combine(cls, mods: Iterable[UnaryMod]) -> UnaryMod:
        """Fold modifiers listed innermost first into one."""
        result = cls.NONE
        for mod in mods:
            result = mod.compose(result)
        return result


_SOURCE_SUFFIX = {
    UnaryMod.NONE: "",
    UnaryMod.TRANSPOSE: "^T",
    UnaryMod.INVERSE: "^-1",
    UnaryMod.INVERSE_TRANSPOSE: "^-T",
}

_DISPLAY_SUFFIX = {
    UnaryMod.NONE: "",
    UnaryMod.TRANSPOSE: "^T",
    UnaryMod.INVERSE: "^{-1}",
    UnaryMod.INVERSE_TRANSPOSE: "^{-T}",
}


@dataclass(frozen=True)
class Operand:
    name: str
    shape: Shape
    properties: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not IDENTIFIER.match(self.name):
            raise InvalidOperand(f"invalid operand name {self.name!r}")
        object.__setattr__(self, "properties", frozenset(self.properties))
        structural = self.properties - {Property.FULL_RANK}
        if structural and not self.shape.is_square:
            names = ", ".join(p.value for p in sorted_properties(structural))
            raise InvalidOperand(f"{self.name} is {self.shape} but declared {names}")

    def __str__(self) -> str:
        return self.name


def effective_shape(operand: Operand, mod: UnaryMod) -> Shape:
    if mod.inverted and not operand.shape.is_square:
        raise NonSquareInverse(f"cannot invert {operand.name} of shape {operand.shape}")
    return operand.shape.transposed() if mod.transposed else operand.shape


@dataclass(frozen=True)
class Factor:
    operand: Operand
    mod: UnaryMod = UnaryMod.NONE

    @property
    def shape(self) -> Shape:
        return effective_shape(self.operand, self.mod)

    def transposed(self) -> Factor:
        return Factor(self.operand, self.mod.with_transpose())

    def __str__(self) -> str:
        return f"{self.operand.name}{self.mod.display_suffix}"


# Expression trees

@dataclass(frozen=True)
class OperandRef:
    operand: Operand

    def __str__(self) -> str:
        return self.operand.name


@dataclass(frozen=True)
class Modified:
    mod: UnaryMod
    child: Expr

    def __str__(self) -> str:
        inner = str(self.child)
        if isinstance(self.child, Product):
            inner = f"({inner})"
        return f"{inner}{self.mod.display_suffix}"


@dataclass(frozen=True)
class Product:
    left: Expr
    right: Expr

    def __str__(self) -> str:
        right = str(self.right)
        if isinstance(self.right, Product):
            right = f"({right})"
        return f"{self.left} {right}"


@dataclass(frozen=True)
class Temporary:
    """Symbolic result of a computed sub-chain."""

    name: str
    shape: Shape
    properties: frozenset
    defining_expr: Expr

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TemporaryRef:
    temporary: Temporary

    def __str__(self) -> str:
        return self.temporary.name


Expr = Union[OperandRef, Modified, Product, TemporaryRef]


def leaf(factor: Factor) -> Expr:
    ref = OperandRef(factor.operand)
    return ref if factor.mod is UnaryMod.NONE else Modified(factor.mod, ref)


def shape_of(expr: Expr) -> Shape:
    if isinstance(expr, OperandRef):
        return expr.operand.shape
    if isinstance(expr, TemporaryRef):
        return expr.temporary.shape
    if isinstance(expr, Modified):
        inner = shape_of(expr.child)
        if expr.mod.inverted and not inner.is_square:
            raise NonSquareInverse(f"cannot invert {expr.child} of shape {inner}")
        return inner.transposed() if expr.mod.transposed else inner
    left, right = shape_of(expr.left), shape_of(expr.right)
    if left.cols != right.rows:
        raise DimensionMismatch(1, f"cannot multiply {left} by {right} in {expr}")
    return Shape(left.rows, right.cols)


def split_leaf(expr: Expr) -> tuple[UnaryMod, Expr]:
    """Separate an optional modifier from an operand or temporary."""
    if isinstance(expr, Modified) and isinstance(expr.child, (OperandRef, TemporaryRef)):
        return expr.mod, expr.child
    return UnaryMod.NONE, expr


def flatten(expr: Expr) -> Optional[tuple[Factor, ...]]:
    """Factor list over original operands with modifiers pushed to the leaves.

    Returns None when an inverse wraps a product of non-square factors, which
    cannot be distributed.
    """
    if isinstance(expr, OperandRef):
        return (Factor(expr.operand),)
    if isinstance(expr, TemporaryRef):
        return flatten(expr.temporary.defining_expr)
    if isinstance(expr, Product):
        left, right = flatten(expr.left), flatten(expr.right)
        if left is None or right is None:
            return None
        return left + right
    inner = flatten(expr.child)
    if inner is None:
        return None
    if expr.mod.inverted and len(inner) > 1 and not all(f.shape.is_square for f in inner):
        return None
    factors = tuple(Factor(f.operand, expr.mod.compose(f.mod)) for f in inner)
    return tuple(reversed(factors)) if expr.mod.reverses else factors


def transpose_factors(factors: Sequence[Factor]) -> tuple[Factor, ...]:
    return tuple(f.transposed() for f in reversed(factors))


@dataclass(frozen=True)
class Chain:
    target: str
    factors: tuple[Factor, ...]

    def __len__(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> Shape:
        return Shape(self.factors[0].shape.rows, self.factors[-1].shape.cols)

    @property
    def sizes(self) -> list[int]:
        return [self.factors[0].shape.rows] + [f.shape.cols for f in self.factors]

    @property
    def operands(self) -> dict[str, Operand]:
        return {f.operand.name: f.operand for f in self.factors}

    def __str__(self) -> str:
        return f"{self.target} := " + " ".join(str(f) for f in self.factors)


FactorSpec = tuple[Operand, Union[UnaryMod, Sequence[UnaryMod]]]


def make_chain(target: str, factors: Sequence[Union[Factor, FactorSpec]]) -> Chain:
    if not IDENTIFIER.match(target):
        raise InvalidOperand(f"invalid target name {target!r}")
    normalized = []
    for item in factors:
        if isinstance(item, Factor):
            normalized.append(item)
            continue
        operand, mods = item
        mod = mods if isinstance(mods, UnaryMod) else UnaryMod.combine(mods)
        normalized.append(Factor(operand, mod))
    if len(normalized) < 2:
        raise ChainTooShort(f"a chain needs at least two factors, got {len(normalized)}")
    shapes = [f.shape for f in normalized]
    for position in range(1, len(shapes)):
        if shapes[position - 1].cols != shapes[position].rows:
            raise DimensionMismatch(
                position,
                f"factor {position} ({normalized[position]}, {shapes[position]}) does not "
                f"conform with {normalized[position - 1]} ({shapes[position - 1]})",
            )
    return Chain(target, tuple(normalized))


def subchain(chain: Chain, i: int, j: int) -> Expr:
    """Left-deep product of factors i..j (inclusive)."""
    if not 0 <= i <= j < len(chain):
        raise IndexOutOfRange(f"sub-chain ({i}, {j}) outside chain of length {len(chain)}")
    expr = leaf(chain.factors[i])
    for factor in chain.factors[i + 1 : j + 1]:
        expr = Product(expr, leaf(factor))
    return expr
