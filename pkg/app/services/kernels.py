"""Kernel registry: declarative kernel records, pattern matching and flags.

A registry document is line oriented::

    kernel <NAME> pattern=<shape>[|<shape>...] [constraints=<Prop>[|<Prop>]@<role>,...]
           [unit=<dims>] [routine=<family>] cost=<polynomial in m,n,k> [template="..."]
    include default

Patterns have the form ``f1(R1)*f2(R2)`` where each role R is ``X`` (the
operand the constraints talk about) or ``Y`` and f is one of ``^T``, ``^-1``,
``^-T`` or nothing. For a matched product the result is m x n and k is the
contraction dimension.
"""
import functools
import logging
import re
import shlex
import string
from dataclasses import dataclass, field
from pathlib import Path
from fractions import Fraction
from typing import Iterator, Mapping, Optional, Union

import sympy

from app.core import config
from app.core.errors import DuplicateKernelName, InvalidKernelSpec, NoMatch
from app.models.expr import (
    Expr,
    OperandRef,
    Product,
    Property,
    Shape,
    TemporaryRef,
    UnaryMod,
    shape_of,
    split_leaf,
)
from app.services.properties import LOWER, UPPER, has_property

logger = logging.getLogger(__name__)

ROLES = ("X", "Y")
DIMENSIONS = ("m", "n", "k")
FLAG_SLOTS = ("side", "uplo", "transX", "transY", "diag")

_PATTERN = re.compile(r"^([XY])(\^T|\^-1|\^-T)?\*([XY])(\^T|\^-1|\^-T)?$")
_M, _N, _K = sympy.symbols("m n k", positive=True)


@dataclass(frozen=True)
class KernelPattern:
    text: str
    left_role: str
    left_mod: UnaryMod
    right_role: str
    right_mod: UnaryMod

    @property
    def key(self) -> tuple[UnaryMod, UnaryMod]:
        return self.left_mod, self.right_mod

    @property
    def same_operand(self) -> bool:
        return self.left_role == self.right_role

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys((self.left_role, self.right_role)))

    @property
    def side(self) -> str:
        """'L' when the structured operand X is the left factor."""
        return "L" if self.left_role == "X" else "R"

    def mod_of(self, role: str) -> UnaryMod:
        return self.left_mod if self.left_role == role else self.right_mod

    def __str__(self) -> str:
        return self.text


def parse_pattern(text: str) -> KernelPattern:
    found = _PATTERN.match(text.strip())
    if not found:
        raise InvalidKernelSpec(f"invalid pattern {text!r}")
    left_role, left_suffix, right_role, right_suffix = found.groups()
    if "X" not in (left_role, right_role):
        raise InvalidKernelSpec(f"pattern {text!r} does not bind role X")
    return KernelPattern(
        text=text.strip(),
        left_role=left_role,
        left_mod=UnaryMod.from_suffix(left_suffix or ""),
        right_role=right_role,
        right_mod=UnaryMod.from_suffix(right_suffix or ""),
    )


@dataclass(frozen=True)
class Constraint:
    role: str
    alternatives: tuple[Property, ...]

    def holds(self, expr: Expr) -> bool:
        return any(has_property(expr, prop) for prop in self.alternatives)

    def __str__(self) -> str:
        return "|".join(p.value for p in self.alternatives) + f"@{self.role}"


@dataclass(frozen=True)
class CostFormula:
    """Polynomial cost evaluated in exact rational arithmetic."""

    text: str
    expr: sympy.Expr
    # (coefficient, (deg m, deg n, deg k)) per monomial
    terms: tuple = field(compare=False, hash=False, repr=False)

    def evaluate(self, m: int, n: int, k: int) -> Union[int, Fraction]:
        total = Fraction(0)
        for coeff, (dm, dn, dk) in self.terms:
            total += coeff * m**dm * n**dn * k**dk
        return total.numerator if total.denominator == 1 else total

    def __str__(self) -> str:
        return self.text


def parse_cost(text: str) -> CostFormula:
    try:
        expr = sympy.sympify(text, locals={"m": _M, "n": _N, "k": _K})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise InvalidKernelSpec(f"invalid cost formula {text!r}: {exc}") from exc
    if not isinstance(expr, sympy.Expr) or not expr.free_symbols <= {_M, _N, _K}:
        raise InvalidKernelSpec(f"cost formula {text!r} may only use m, n and k")
    if not expr.is_polynomial(_M, _N, _K):
        raise InvalidKernelSpec(f"cost formula {text!r} is not a polynomial")
    poly = sympy.Poly(sympy.expand(expr), _M, _N, _K)
    terms = tuple((Fraction(str(coeff)), degrees) for degrees, coeff in poly.terms())
    return CostFormula(text, expr, terms)


@dataclass(frozen=True)
class BoundOperand:
    """Operand or temporary bound to a pattern side, with its modifier."""

    name: str
    expr: Expr
    mod: UnaryMod
    shape: Shape


@dataclass(frozen=True)
class Binding:
    pattern: KernelPattern
    left: BoundOperand
    right: BoundOperand
    m: int
    n: int
    k: int

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.m, self.n, self.k

    @property
    def roles(self) -> dict[str, BoundOperand]:
        if self.pattern.same_operand:
            return {self.pattern.left_role: self.right}
        return {self.pattern.left_role: self.left, self.pattern.right_role: self.right}


@dataclass(frozen=True)
class Kernel:
    name: str
    patterns: tuple[KernelPattern, ...]
    cost: CostFormula
    constraints: tuple[Constraint, ...] = ()
    template: Optional[str] = None
    routine: str = ""
    unit: tuple[str, ...] = ()
    index: int = 0

    @property
    def overwrites(self) -> Optional[str]:
        """Role whose buffer receives the result when the template has no {OUT}."""
        if self.template is None or "OUT" in template_slots(self.template):
            return None
        return "Y"

    def accepts(self, binding: Binding) -> bool:
        """Re-check a binding: shapes conform, guards and constraints hold."""
        if binding.pattern not in self.patterns:
            return False
        if binding.left.shape.cols != binding.right.shape.rows:
            return False
        dims = dict(zip(DIMENSIONS, binding.dims))
        if any(dims[d] != 1 for d in self.unit):
            return False
        roles = binding.roles
        return all(c.holds(roles[c.role].expr) for c in self.constraints)

    def describe_pattern(self) -> str:
        return "|".join(p.text for p in self.patterns)


class Registry:
    """Immutable, ordered kernel collection indexed by root shape."""

    def __init__(self, kernels: tuple[Kernel, ...] = ()):
        self.kernels = tuple(kernels)
        index: dict[tuple[UnaryMod, UnaryMod], list[tuple[Kernel, KernelPattern]]] = {}
        for kernel in self.kernels:
            for pattern in kernel.patterns:
                index.setdefault(pattern.key, []).append((kernel, pattern))
        self._index: Mapping = {key: tuple(items) for key, items in index.items()}
        self._by_name = {kernel.name: kernel for kernel in self.kernels}

    def __len__(self) -> int:
        return len(self.kernels)

    def __iter__(self) -> Iterator[Kernel]:
        return iter(self.kernels)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> Optional[Kernel]:
        return self._by_name.get(name)

    @property
    def names(self) -> list[str]:
        return [kernel.name for kernel in self.kernels]

    def candidates(self, left_mod: UnaryMod, right_mod: UnaryMod) -> tuple:
        return self._index.get((left_mod, right_mod), ())


def template_slots(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def _parse_constraints(text: str, pattern_roles: set[str], where: str) -> tuple[Constraint, ...]:
    constraints = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        if "@" not in item:
            raise InvalidKernelSpec(f"{where}: constraint {item!r} lacks @role")
        props_text, role = item.rsplit("@", 1)
        if role not in pattern_roles:
            raise InvalidKernelSpec(f"{where}: constraint {item!r} names unknown role {role!r}")
        alternatives = []
        for name in props_text.split("|"):
            prop = Property.parse(name.strip())
            if prop is None:
                raise InvalidKernelSpec(f"{where}: unknown property {name!r}")
            alternatives.append(prop)
        constraints.append(Constraint(role, tuple(alternatives)))
    return tuple(constraints)


def _parse_kernel(tokens: list[str], index: int, where: str) -> Kernel:
    if len(tokens) < 2:
        raise InvalidKernelSpec(f"{where}: kernel record needs a name")
    name = tokens[1]
    if not re.match(r"^[A-Za-z_][A-Za-z0-9_]*$", name):
        raise InvalidKernelSpec(f"{where}: invalid kernel name {name!r}")
    fields: dict[str, str] = {}
    for token in tokens[2:]:
        if "=" not in token:
            raise InvalidKernelSpec(f"{where}: expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        if key not in ("pattern", "constraints", "cost", "template", "routine", "unit"):
            raise InvalidKernelSpec(f"{where}: unknown field {key!r}")
        fields[key] = value
    for required in ("pattern", "cost"):
        if required not in fields:
            raise InvalidKernelSpec(f"{where}: kernel {name} has no {required}")

    patterns = tuple(parse_pattern(text) for text in fields["pattern"].split("|"))
    roles = {role for pattern in patterns for role in pattern.roles}
    if any(set(p.roles) != set(patterns[0].roles) for p in patterns):
        raise InvalidKernelSpec(f"{where}: pattern alternatives of {name} bind different roles")
    constraints = _parse_constraints(fields.get("constraints", ""), roles, where)

    unit = tuple(filter(None, (d.strip() for d in fields.get("unit", "").split(","))))
    if any(d not in DIMENSIONS for d in unit):
        raise InvalidKernelSpec(f"{where}: unit guard may only name m, n, k")

    template = fields.get("template")
    if template is not None:
        try:
            slots = template_slots(template)
        except ValueError as exc:
            raise InvalidKernelSpec(f"{where}: malformed template: {exc}") from exc
        role_slots = slots & set(ROLES)
        if role_slots != roles:
            raise InvalidKernelSpec(
                f"{where}: template slots {sorted(role_slots)} do not match roles {sorted(roles)}"
            )
        unknown = slots - set(ROLES) - set(FLAG_SLOTS) - {"OUT"}
        if unknown:
            raise InvalidKernelSpec(f"{where}: unknown template slots {sorted(unknown)}")
        if "OUT" not in slots and "Y" not in roles:
            raise InvalidKernelSpec(f"{where}: template without {{OUT}} needs a Y buffer")

    routine = fields.get("routine") or name.split("_")[0].lower()
    return Kernel(
        name=name,
        patterns=patterns,
        cost=parse_cost(fields["cost"]),
        constraints=constraints,
        template=template,
        routine=routine,
        unit=unit,
        index=index,
    )


def load_registry(
    text: str,
    source: Optional[str] = None,
    _seen: Optional[set] = None,
    allow_files: bool = True,
) -> Registry:
    """Parse a registry document. Without ``allow_files`` only ``include default`` resolves."""
    kernels: list[Kernel] = []
    seen_sources = set(_seen or ())
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source or '<registry>'}:{lineno}"
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise InvalidKernelSpec(f"{where}: {exc}") from exc
        if not tokens:
            continue
        if tokens[0] == "include" and len(tokens) == 2:
            if tokens[1] == "default":
                path = config.DEFAULT_REGISTRY_PATH
            elif not allow_files:
                raise InvalidKernelSpec(f"{where}: only 'include default' is allowed here")
            else:
                path = Path(tokens[1])
                if not path.is_absolute() and source:
                    path = Path(source).parent / path
            if str(path) in seen_sources:
                raise InvalidKernelSpec(f"{where}: recursive include of {path}")
            try:
                included_text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise InvalidKernelSpec(f"{where}: cannot include {path}: {exc}") from exc
            included = load_registry(included_text, str(path), seen_sources | {str(path)})
            kernels.extend(included.kernels)
            continue
        if tokens[0] != "kernel":
            raise InvalidKernelSpec(f"{where}: expected a kernel or include record")
        kernels.append(_parse_kernel(tokens, len(kernels), where))

    names: set[str] = set()
    for kernel in kernels:
        if kernel.name in names:
            raise DuplicateKernelName(f"kernel {kernel.name} declared twice")
        names.add(kernel.name)
    # Re-number so declaration order spans included documents.
    kernels = [
        Kernel(k.name, k.patterns, k.cost, k.constraints, k.template, k.routine, k.unit, i)
        for i, k in enumerate(kernels)
    ]
    logger.info("Loaded %d kernels from %s", len(kernels), source or "<registry>")
    return Registry(tuple(kernels))


def load_registry_file(path: Union[str, Path]) -> Registry:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidKernelSpec(f"cannot read registry {path}: {exc}") from exc
    return load_registry(text, str(path), {str(path)})


@functools.lru_cache(maxsize=1)
def default_registry() -> Registry:
    return load_registry_file(config.REGISTRY_PATH)


def _bound(expr: Expr) -> Optional[tuple[UnaryMod, BoundOperand]]:
    mod, base = split_leaf(expr)
    if not isinstance(base, (OperandRef, TemporaryRef)):
        return None
    name = base.operand.name if isinstance(base, OperandRef) else base.temporary.name
    return mod, BoundOperand(name, base, mod, shape_of(expr))


def match(expr: Expr, registry: Registry) -> list[tuple[Kernel, Binding]]:
    """All kernels able to compute ``expr``, in declaration order."""
    if not isinstance(expr, Product):
        return []
    left, right = _bound(expr.left), _bound(expr.right)
    if left is None or right is None:
        return []
    (left_mod, left_op), (right_mod, right_op) = left, right
    if left_op.shape.cols != right_op.shape.rows:
        return []

    results: list[tuple[Kernel, Binding]] = []
    matched: set[str] = set()
    for kernel, pattern in registry.candidates(left_mod, right_mod):
        if kernel.name in matched:
            continue
        if pattern.same_operand and not (
            isinstance(left_op.expr, OperandRef) and left_op.expr == right_op.expr
        ):
            continue
        binding = Binding(
            pattern=pattern,
            left=left_op,
            right=right_op,
            m=left_op.shape.rows,
            n=right_op.shape.cols,
            k=left_op.shape.cols,
        )
        if kernel.accepts(binding):
            results.append((kernel, binding))
            matched.add(kernel.name)
    return results


def derive_flags(kernel: Kernel, binding: Binding) -> dict[str, str]:
    """BLAS-style flags as a function of the binding.

    side    L when X is the left factor, R otherwise
    uplo    U when X is upper (and not lower) triangular, L otherwise
    transX  T when X appears transposed (left occurrence for X^T X / X X^T)
    transY  T when Y appears transposed
    diag    always N
    """
    pattern = binding.pattern
    x = binding.roles["X"]
    upper = has_property(x.expr, UPPER) and not has_property(x.expr, LOWER)
    flags = {
        "side": pattern.side,
        "uplo": "U" if upper else "L",
        "transX": "T" if pattern.mod_of("X").transposed else "N",
        "transY": "N",
        "diag": "N",
    }
    if "Y" in pattern.roles and pattern.mod_of("Y").transposed:
        flags["transY"] = "T"
    return flags


def best_match(expr: Expr, registry: Registry, metric) -> tuple[Kernel, Binding, "CostValue"]:
    """Cheapest matching kernel under ``metric``; earliest declared wins ties.

    Raises NoMatch when no kernel computes ``expr``.
    """
    best = None
    for kernel, binding in match(expr, registry):
        cost = metric.evaluate(kernel, binding)
        if best is None or cost < best[2]:
            best = (kernel, binding, cost)
    if best is None:
        raise NoMatch(f"no kernel computes {expr}")
    return best
