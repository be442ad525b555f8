"""Error hierarchy shared by the services, the CLI and the HTTP layer."""
from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_UNSOLVABLE = 3
EXIT_NUMERIC = 4


class GMCError(Exception):
    """Base class for every error raised by the compiler."""

    code = "error"
    exit_code = EXIT_PARSE
    http_status = 400

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# Parsing

class ParseError(GMCError):
    code = "parse_error"


class GMCSyntaxError(ParseError):
    code = "syntax_error"

    def __init__(self, line: int, col: int, message: str, source: Optional[str] = None):
        self.line = line
        self.col = col
        self.source = source
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{col}: {message}")


class DuplicateName(ParseError):
    code = "duplicate_name"


class UnknownProperty(ParseError):
    code = "unknown_property"


class UndefinedSymbol(ParseError):
    code = "undefined_symbol"


class UnsupportedOperator(ParseError):
    code = "unsupported_operator"

    def __init__(self, operator: str, message: str = ""):
        self.operator = operator
        super().__init__(message or f"operator {operator!r} is not supported in product chains")


# Chains and expressions

class ChainError(GMCError):
    code = "chain_error"


class DimensionMismatch(ChainError):
    code = "dimension_mismatch"

    def __init__(self, position: int, message: str = ""):
        self.position = position
        super().__init__(message or f"dimension mismatch at factor {position}")


class ChainTooShort(ChainError):
    code = "chain_too_short"


class ChainTooLong(ChainError):
    code = "chain_too_long"


class TooShort(ChainError):
    code = "too_short"


class NonSquareInverse(ChainError):
    code = "non_square_inverse"


class IndexOutOfRange(ChainError):
    code = "index_out_of_range"


class InvalidOperand(ChainError):
    code = "invalid_operand"


# Kernel registry

class RegistryError(GMCError):
    code = "registry_error"


class InvalidKernelSpec(RegistryError):
    code = "invalid_kernel_spec"


class DuplicateKernelName(RegistryError):
    code = "duplicate_kernel_name"


class MissingTemplate(RegistryError):
    code = "missing_template"


# Cost model

class CostError(GMCError):
    code = "cost_error"


class NonPositiveDimension(CostError):
    code = "non_positive_dimension"


class MissingEntry(CostError):
    code = "missing_entry"


class InvalidCostTable(CostError):
    code = "invalid_cost_table"


# Solving

class UnsolvableError(GMCError):
    code = "unsolvable"
    exit_code = EXIT_UNSOLVABLE
    http_status = 422


class Unsolvable(UnsolvableError):
    code = "unsolvable"


class UnsolvableRange(UnsolvableError):
    code = "unsolvable_range"


class NoMatch(UnsolvableError):
    code = "no_match"


# Numerics

class NumericError(GMCError):
    code = "numeric_error"
    exit_code = EXIT_NUMERIC
    http_status = 500


class SingularSystem(NumericError):
    code = "singular_system"


class ShapeMismatch(NumericError):
    code = "shape_mismatch"


class CheckFailed(NumericError):
    code = "check_failed"
