"""Parser for problem files: operand definitions plus one product assignment.

    Matrix A (100, 100) <LowerTriangular, FullRank>
    Vector v (100, 1) <>
    X := A^-1 * B * C^T

``#`` starts a comment. Postfix modifiers are ``^T``, ``^-1`` and ``^-T``.
Parentheses may group modifiers; parentheses around products are dropped
because choosing the parenthesization is the solver's job.
"""
import logging
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, NamedTuple, Optional

from app.core.errors import (
    DuplicateName,
    GMCError,
    GMCSyntaxError,
    InvalidOperand,
    UndefinedSymbol,
    UnknownProperty,
    UnsupportedOperator,
)
from app.models.expr import Chain, Operand, Property, UnaryMod, make_chain, sorted_properties
from app.services.properties import make_operand

logger = logging.getLogger(__name__)

DECLARATION_KEYWORDS = ("Matrix", "Vector")


class Token(NamedTuple):
    kind: str
    text: str
    col: int


_TOKEN_SPEC = [
    ("NUMBER", r"\d+(?:\.\d*)?"),
    ("MOD", r"\^(?:T|-1|-T)"),
    ("ASSIGN", r":="),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("COMMA", r","),
    ("LT", r"<"),
    ("GT", r">"),
    ("STAR", r"\*"),
    ("OP", r"[+\-/]"),
    ("SPACE", r"[ \t\r]+"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))


def tokenize(line: str, lineno: int = 1, source: Optional[str] = None) -> list[Token]:
    tokens = []
    for found in _TOKEN_RE.finditer(line):
        kind = found.lastgroup
        col = found.start() + 1
        if kind == "SPACE":
            continue
        if kind == "MISMATCH":
            raise GMCSyntaxError(lineno, col, f"unexpected character {found.group()!r}", source)
        tokens.append(Token(kind, found.group(), col))
    tokens.append(Token("END", "", len(line) + 1))
    return tokens


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].rstrip()


def _lines(text: str) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if line.strip():
            yield lineno, line


@dataclass(frozen=True)
class ProblemFile:
    definitions: tuple[Operand, ...]
    assignment: Chain

    @property
    def operands(self) -> dict[str, Operand]:
        return {operand.name: operand for operand in self.definitions}


class _Cursor:
    def __init__(self, tokens: list[Token], lineno: int, source: Optional[str]):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno
        self.source = source

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, token: Optional[Token] = None) -> GMCSyntaxError:
        token = token or self.current
        return GMCSyntaxError(self.lineno, token.col, message, self.source)

    def take(self, kind: str, what: str) -> Token:
        token = self.current
        if token.kind != kind:
            found = token.text or "end of line"
            raise self.error(f"expected {what}, found {found!r}")
        self.pos += 1
        return token

    def accept(self, kind: str) -> Optional[Token]:
        if self.current.kind == kind:
            self.pos += 1
            return self.tokens[self.pos - 1]
        return None


def _parse_definition(line: str, lineno: int, source: Optional[str]) -> Operand:
    cursor = _Cursor(tokenize(line, lineno, source), lineno, source)
    keyword = cursor.take("IDENT", "Matrix or Vector")
    if keyword.text not in DECLARATION_KEYWORDS:
        raise cursor.error(f"unknown declaration {keyword.text!r}", keyword)
    name = cursor.take("IDENT", "operand name")
    cursor.take("LPAREN", "'(' starting the size")
    rows = cursor.take("NUMBER", "row count")
    cursor.take("COMMA", "',' between rows and columns")
    cols = cursor.take("NUMBER", "column count")
    cursor.take("RPAREN", "')' closing the size")

    properties = []
    cursor.take("LT", "'<' starting the property list")
    if not cursor.accept("GT"):
        while True:
            token = cursor.take("IDENT", "property name")
            prop = Property.parse(token.text)
            if prop is None:
                raise UnknownProperty(
                    f"{source + ':' if source else ''}{lineno}:{token.col}: "
                    f"unknown property {token.text!r}"
                )
            properties.append(prop)
            if cursor.accept("GT"):
                break
            cursor.take("COMMA", "',' or '>' in the property list")
    cursor.take("END", "end of line")

    for token in (rows, cols):
        if not token.text.isdigit() or int(token.text) < 1:
            raise cursor.error("sizes must be positive integers", token)
    n_rows, n_cols = int(rows.text), int(cols.text)
    if keyword.text == "Vector" and 1 not in (n_rows, n_cols):
        raise cursor.error(f"vector {name.text} must have a unit dimension", keyword)
    try:
        return make_operand(name.text, n_rows, n_cols, properties)
    except InvalidOperand as exc:
        raise InvalidOperand(f"{source + ':' if source else ''}{lineno}: {exc.message}") from exc


def parse_definitions(text: str, source: Optional[str] = None) -> list[Operand]:
    operands: dict[str, Operand] = {}
    for lineno, line in _lines(text):
        if ":=" in line:
            continue
        operand = _parse_definition(line, lineno, source)
        if operand.name in operands:
            raise DuplicateName(
                f"{source + ':' if source else ''}{lineno}: {operand.name} is defined twice"
            )
        operands[operand.name] = operand
    return list(operands.values())


# Factor lists carry the modifiers of each operand, innermost first.
_Factors = list[tuple[Token, list[UnaryMod]]]


def _parse_product(cursor: _Cursor) -> _Factors:
    factors = _parse_term(cursor)
    while True:
        if cursor.accept("STAR"):
            factors = factors + _parse_term(cursor)
        elif cursor.current.kind == "OP":
            token = cursor.current
            raise UnsupportedOperator(
                token.text,
                f"{cursor.lineno}:{token.col}: operator {token.text!r} is not supported; "
                "only products of matrices can be compiled",
            )
        else:
            return factors


def _parse_term(cursor: _Cursor) -> _Factors:
    token = cursor.current
    if token.kind == "IDENT":
        cursor.pos += 1
        factors: _Factors = [(token, [])]
    elif token.kind == "LPAREN":
        cursor.pos += 1
        factors = _parse_product(cursor)
        cursor.take("RPAREN", "')'")
        if len(factors) > 1:
            logger.warning(
                "line %d: parentheses around a product are ignored; the solver picks the "
                "parenthesization",
                cursor.lineno,
            )
    elif token.kind == "NUMBER":
        raise cursor.error("scalars are not supported in matrix chains")
    else:
        raise cursor.error(f"expected an operand, found {token.text or 'end of line'!r}")

    while cursor.current.kind == "MOD":
        mod_token = cursor.current
        cursor.pos += 1
        if len(factors) > 1:
            raise cursor.error(
                "modifiers may only be applied to single operands, not to products", mod_token
            )
        operand_token, mods = factors[0]
        factors = [(operand_token, mods + [UnaryMod.from_suffix(mod_token.text)])]
    return factors


def _parse_assignment_line(
    line: str, lineno: int, operands: Mapping[str, Operand], source: Optional[str]
) -> Chain:
    cursor = _Cursor(tokenize(line, lineno, source), lineno, source)
    target = cursor.take("IDENT", "assignment target")
    cursor.take("ASSIGN", "':='")
    factors = _parse_product(cursor)
    cursor.take("END", "end of line")

    resolved = []
    for token, mods in factors:
        operand = operands.get(token.text)
        if operand is None:
            raise UndefinedSymbol(
                f"{source + ':' if source else ''}{lineno}:{token.col}: "
                f"{token.text!r} is not defined"
            )
        resolved.append((operand, UnaryMod.combine(mods)))
    if target.text in operands:
        raise DuplicateName(f"{lineno}: target {target.text} is already an operand")
    try:
        return make_chain(target.text, resolved)
    except GMCError as exc:
        exc.message = f"{source + ':' if source else ''}{lineno}: {exc.message}"
        exc.args = (exc.message,)
        raise


def parse_assignment(
    text: str, operands: Mapping[str, Operand], source: Optional[str] = None
) -> Chain:
    """Parse the single assignment found in ``text``."""
    assignments = [(lineno, line) for lineno, line in _lines(text) if ":=" in line]
    if not assignments:
        raise GMCSyntaxError(1, 1, "no assignment found", source)
    if len(assignments) > 1:
        lineno = assignments[1][0]
        raise GMCSyntaxError(lineno, 1, "only one assignment per problem is supported", source)
    lineno, line = assignments[0]
    if isinstance(operands, (list, tuple)):
        operands = {operand.name: operand for operand in operands}
    return _parse_assignment_line(line, lineno, operands, source)


def parse_problem(text: str, source: Optional[str] = None) -> ProblemFile:
    definitions = parse_definitions(text, source)
    chain = parse_assignment(text, {op.name: op for op in definitions}, source)
    return ProblemFile(tuple(definitions), chain)


def format_operand(operand: Operand) -> str:
    props = ", ".join(p.value for p in sorted_properties(operand.properties))
    return f"Matrix {operand.name} ({operand.shape.rows}, {operand.shape.cols}) <{props}>"


def format_problem(problem: ProblemFile) -> str:
    lines = [format_operand(operand) for operand in problem.definitions]
    chain = problem.assignment
    factors = " * ".join(f"{f.operand.name}{f.mod.source_suffix}" for f in chain.factors)
    lines.append(f"{chain.target} := {factors}")
    return "\n".join(lines) + "\n"
