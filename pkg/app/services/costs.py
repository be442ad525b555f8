"""Cost values and pluggable cost metrics."""
import functools
import logging
import math
import shlex
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

from app.core.errors import InvalidCostTable, MissingEntry, NonPositiveDimension
from app.services.kernels import Binding, Kernel

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]


@functools.total_ordering
class CostValue:
    """Additive, totally ordered cost.

    A cost is a tuple of reals compared lexicographically (a scalar metric is
    a 1-tuple) or the unreachable cost, which absorbs addition and is greater
    than every finite cost. The empty tuple is the zero of every arity.
    """

    __slots__ = ("values", "unreachable")

    def __init__(self, values: Sequence[Number] = (), unreachable: bool = False):
        self.values = () if unreachable else tuple(values)
        self.unreachable = unreachable

    @classmethod
    def scalar(cls, value: Number) -> "CostValue":
        return cls((value,))

    @classmethod
    def vector(cls, *values: Number) -> "CostValue":
        return cls(values)

    @property
    def scalar_value(self) -> Number:
        if self.unreachable:
            return math.inf
        return self.values[0] if self.values else 0

    def _padded(self, arity: int) -> tuple:
        if len(self.values) > arity:
            raise ValueError(f"cost arity {len(self.values)} does not match {arity}")
        return self.values + (0,) * (arity - len(self.values))

    def _arity_with(self, other: "CostValue") -> int:
        if self.values and other.values and len(self.values) != len(other.values):
            raise ValueError(
                f"cannot combine costs of arity {len(self.values)} and {len(other.values)}"
            )
        return max(len(self.values), len(other.values))

    def __add__(self, other: "CostValue") -> "CostValue":
        if not isinstance(other, CostValue):
            return NotImplemented
        if self.unreachable or other.unreachable:
            return UNREACHABLE
        arity = self._arity_with(other)
        return CostValue(tuple(a + b for a, b in zip(self._padded(arity), other._padded(arity))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CostValue):
            return NotImplemented
        if self.unreachable or other.unreachable:
            return self.unreachable and other.unreachable
        arity = self._arity_with(other)
        return self._padded(arity) == other._padded(arity)

    def __lt__(self, other: "CostValue") -> bool:
        if not isinstance(other, CostValue):
            return NotImplemented
        if self.unreachable:
            return False
        if other.unreachable:
            return True
        arity = self._arity_with(other)
        return self._padded(arity) < other._padded(arity)

    def __hash__(self) -> int:
        if self.unreachable:
            return hash("unreachable")
        values = list(self.values)
        while values and values[-1] == 0:
            values.pop()
        return hash(tuple(values))

    def __repr__(self) -> str:
        return "CostValue(unreachable)" if self.unreachable else f"CostValue({self.values!r})"

    def __str__(self) -> str:
        if self.unreachable:
            return "inf"
        parts = [format_number(v) for v in (self.values or (0,))]
        return parts[0] if len(parts) == 1 else "(" + ", ".join(parts) + ")"


UNREACHABLE = CostValue(unreachable=True)
ZERO = CostValue()


def format_number(value: Number) -> str:
    if isinstance(value, int):
        return str(value)
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return f"{float(value):.6g}"


def plain_number(value: Number) -> Union[int, float]:
    """JSON-friendly copy of a cost component."""
    if isinstance(value, Fraction):
        return value.numerator if value.denominator == 1 else float(value)
    return value


def flop_count(kernel: Kernel, dims: tuple[int, int, int]) -> Number:
    if any(d < 1 for d in dims):
        raise NonPositiveDimension(f"{kernel.name} evaluated at non-positive dimensions {dims}")
    return kernel.cost.evaluate(*dims)


def flop_metric(kernel: Kernel, dims: tuple[int, int, int]) -> CostValue:
    return CostValue.scalar(flop_count(kernel, dims))


class CostMetric:
    """Maps a matched kernel to a cost value."""

    name = "metric"
    arity = 1

    def evaluate(self, kernel: Kernel, binding: Binding) -> CostValue:
        raise NotImplementedError

    def zero(self) -> CostValue:
        return CostValue((0,) * self.arity)

    def __str__(self) -> str:
        return self.name


class FlopMetric(CostMetric):
    name = "flops"

    def evaluate(self, kernel: Kernel, binding: Binding) -> CostValue:
        return flop_metric(kernel, binding.dims)


class CallCountMetric(CostMetric):
    name = "calls"

    def evaluate(self, kernel: Kernel, binding: Binding) -> CostValue:
        return CostValue.scalar(1)


class InverseCountMetric(CostMetric):
    """Number of explicit inversions, so that solves are preferred."""

    name = "inverses"

    def evaluate(self, kernel: Kernel, binding: Binding) -> CostValue:
        if kernel.routine != "getri":
            return CostValue.scalar(0)
        inverted = sum(1 for role in binding.roles.values() if role.mod.inverted)
        return CostValue.scalar(max(inverted, 1))


class VectorMetric(CostMetric):
    """Lexicographic combination of scalar metrics."""

    def __init__(self, components: Sequence[CostMetric]):
        if not components:
            raise ValueError("a vector metric needs at least one component")
        self.components = tuple(components)
        self.arity = len(self.components)
        self.name = "vector:" + ",".join(c.name for c in self.components)

    def evaluate(self, kernel: Kernel, binding: Binding) -> CostValue:
        return CostValue(
            tuple(c.evaluate(kernel, binding).scalar_value for c in self.components)
        )


@dataclass(frozen=True)
class CostTable:
    entries: dict = field(default_factory=dict)
    fallback: str = "error"


def parse_cost_table(text: str, source: str = "<cost table>") -> CostTable:
    entries: dict[str, dict[tuple[int, int, int], Fraction]] = {}
    fallback = "error"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise InvalidCostTable(f"{where}: {exc}") from exc
        if not tokens:
            continue
        if tokens[0] == "fallback" and len(tokens) == 2 and tokens[1] in ("nearest", "error"):
            fallback = tokens[1]
            continue
        if tokens[0] != "cost" or len(tokens) != 6:
            raise InvalidCostTable(f"{where}: expected 'cost <KERNEL> m= n= k= value='")
        try:
            fields = dict(token.split("=", 1) for token in tokens[2:])
            dims = (int(fields["m"]), int(fields["n"]), int(fields["k"]))
            value = Fraction(fields["value"])
        except (KeyError, ValueError, ZeroDivisionError) as exc:
            raise InvalidCostTable(f"{where}: {exc}") from exc
        if any(d < 1 for d in dims) or value < 0:
            raise InvalidCostTable(f"{where}: dimensions must be positive and value nonnegative")
        entries.setdefault(tokens[1], {})[dims] = value
    return CostTable(entries, fallback)


class TableMetric(CostMetric):
    """Measured costs looked up per kernel and dimension bucket.

    Measured kernel costs are not composable: the sum of separately timed
    calls differs from the time of the same calls run back to back, so a
    table metric only approximates the cost of a whole chain.
    """

    name = "table"

    def __init__(self, table: CostTable):
        self.table = table

    def lookup(self, kernel_name: str, dims: tuple[int, int, int]) -> Fraction:
        buckets = self.table.entries.get(kernel_name, {})
        if dims in buckets:
            return buckets[dims]
        if self.table.fallback != "nearest" or not buckets:
            raise MissingEntry(f"no measured cost for {kernel_name} at m,n,k={dims}")
        nearest = min(buckets, key=lambda bucket: _log_distance(bucket, dims))
        logger.debug("Cost of %s at %s taken from bucket %s", kernel_name, dims, nearest)
        return buckets[nearest]

    def evaluate(self, kernel: Kernel, binding: Binding) -> CostValue:
        return CostValue.scalar(self.lookup(kernel.name, binding.dims))


def _log_distance(a: tuple[int, ...], b: tuple[int, ...]) -> float:
    return sum((math.log(x) - math.log(y)) ** 2 for x, y in zip(a, b))


def table_metric(table: Union[str, CostTable], source: str = "<cost table>") -> TableMetric:
    if isinstance(table, str):
        table = parse_cost_table(table, source)
    return TableMetric(table)


_SCALAR_METRICS = {
    "flops": FlopMetric,
    "calls": CallCountMetric,
    "inverses": InverseCountMetric,
}


def parse_metric(spec: str) -> CostMetric:
    """``flops``, ``table:<file>`` or ``vector:<name>,<name>,...``."""
    spec = spec.strip()
    if spec in _SCALAR_METRICS:
        return _SCALAR_METRICS[spec]()
    if spec.startswith("table:"):
        path = Path(spec[len("table:") :])
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidCostTable(f"cannot read cost table {path}: {exc}") from exc
        return table_metric(text, str(path))
    if spec.startswith("vector:"):
        names = [name.strip() for name in spec[len("vector:") :].split(",") if name.strip()]
        unknown = [name for name in names if name not in _SCALAR_METRICS]
        if unknown or not names:
            raise InvalidCostTable(f"unknown metric components in {spec!r}")
        return VectorMetric([_SCALAR_METRICS[name]() for name in names])
    raise InvalidCostTable(f"unknown metric {spec!r}")
