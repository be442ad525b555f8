from fractions import Fraction

import pytest

from app.core import config
from app.core.errors import DuplicateKernelName, InvalidKernelSpec, NoMatch
from app.models.expr import Modified, OperandRef, Product, Property, UnaryMod
from app.services.costs import FlopMetric
from app.services.kernels import (
    best_match,
    derive_flags,
    load_registry,
    match,
    parse_cost,
    parse_pattern,
)
from app.services.properties import make_operand


def ref(name, rows, cols, *props):
    return OperandRef(make_operand(name, rows, cols, props))


def test_parse_pattern():
    pattern = parse_pattern("Y*X^-T")
    assert pattern.left_role == "Y"
    assert pattern.right_mod is UnaryMod.INVERSE_TRANSPOSE
    assert pattern.side == "R"
    assert not pattern.same_operand
    assert parse_pattern("X^T*X").same_operand
    with pytest.raises(InvalidKernelSpec):
        parse_pattern("X+Y")
    with pytest.raises(InvalidKernelSpec):
        parse_pattern("Y*Y")


def test_cost_formulas_are_polynomials():
    """Test cost formula parsing and evaluation"""
    assert parse_cost("2*m*n*k").evaluate(20, 20, 20) == 16000
    assert parse_cost("m^2*n").evaluate(20, 15, 20) == 6000
    assert parse_cost("m^3/3 + 2*m^2*n").evaluate(3, 1, 3) == 27 // 3 + 18
    assert parse_cost("m^3/3 + 2*m^2*n").evaluate(20, 15, 20) == Fraction(8000, 3) + 12000
    assert type(parse_cost("2*m^3/3").evaluate(3, 1, 1)) is int
    assert parse_cost("0.5*m*n").evaluate(3, 1, 1) == Fraction(3, 2)
    with pytest.raises(InvalidKernelSpec):
        parse_cost("2*m*q")
    with pytest.raises(InvalidKernelSpec):
        parse_cost("log(m)")
    with pytest.raises(InvalidKernelSpec):
        parse_cost("2*m*(")


def test_default_registry_contents(default_registry):
    """Test the default registry lists the main kernels in order"""
    for name in ("GEMM", "TRMM", "SYMM", "TRSM", "SYRK", "POSV"):
        assert name in default_registry
    assert default_registry.names[-1] == "GEMM"
    assert default_registry.get("TRMV").routine == "trmm"


def test_extended_registry_includes_default(default_registry, extended_registry):
    assert extended_registry.names[: len(default_registry)] == default_registry.names
    assert "GETRI_2" in extended_registry


def test_registry_errors():
    """Test invalid registry documents"""
    with pytest.raises(InvalidKernelSpec):
        load_registry("kernel GEMM pattern=X*Y")
    with pytest.raises(InvalidKernelSpec):
        load_registry("kernel K pattern=X*Y cost=m constraints=Banded@X")
    with pytest.raises(InvalidKernelSpec):
        load_registry("kernel K pattern=X*Y cost=m constraints=SPD@Z")
    with pytest.raises(InvalidKernelSpec):
        load_registry('kernel K pattern=X*Y cost=m template="{OUT} = f({X}, {Z})"')
    with pytest.raises(InvalidKernelSpec):
        load_registry("module K")
    with pytest.raises(DuplicateKernelName):
        load_registry("kernel K pattern=X*Y cost=m\nkernel K pattern=X*Y cost=n")


def test_empty_registry():
    assert len(load_registry("# nothing here\n")) == 0


def test_include_relative_file(tmp_path):
    """Test include of a registry next to the including document"""
    (tmp_path / "base.kernels").write_text("kernel BASE pattern=X*Y cost=2*m*n*k\n")
    registry = load_registry("include base.kernels\nkernel EXTRA pattern=X^T*Y cost=m", str(tmp_path / "main.kernels"))
    assert registry.names == ["BASE", "EXTRA"]
    assert registry.get("EXTRA").index == 1


def test_include_restricted_to_default(tmp_path):
    """Test that untrusted documents may only include the bundled registry"""
    (tmp_path / "base.kernels").write_text("kernel BASE pattern=X*Y cost=2*m*n*k\n")
    with pytest.raises(InvalidKernelSpec, match="include default"):
        load_registry(f"include {tmp_path / 'base.kernels'}", allow_files=False)
    registry = load_registry("include default\nkernel EXTRA pattern=X^T*Y cost=m", allow_files=False)
    assert registry.names[-1] == "EXTRA"
    assert "GEMM" in registry


def test_match_respects_constraints(default_registry):
    """Test that TRMM only matches triangular operands"""
    lower = ref("L", 10, 10, Property.LOWER_TRIANGULAR)
    general = ref("G", 10, 10)
    b = ref("B", 10, 5)
    names = [k.name for k, _ in match(Product(lower, b), default_registry)]
    assert "TRMM" in names and "GEMM" in names
    assert "TRMM" not in [k.name for k, _ in match(Product(general, b), default_registry)]


def test_syrk_needs_the_same_operand(default_registry):
    a = ref("A", 20, 20)
    other = ref("B", 20, 20)
    assert "SYRK" in [k.name for k, _ in match(Product(Modified(UnaryMod.TRANSPOSE, a), a), default_registry)]
    assert "SYRK" not in [
        k.name for k, _ in match(Product(Modified(UnaryMod.TRANSPOSE, a), other), default_registry)
    ]


def test_unit_guard(default_registry):
    """Test that GEMV needs a vector right-hand side"""
    a = ref("A", 10, 10)
    v = ref("v", 10, 1)
    assert "GEMV" in [k.name for k, _ in match(Product(a, v), default_registry)]
    assert "GEMV" not in [k.name for k, _ in match(Product(a, ref("B", 10, 2)), default_registry)]


def test_best_match_prefers_cheapest(default_registry):
    lower = ref("L", 10, 10, Property.LOWER_TRIANGULAR)
    b = ref("B", 10, 5)
    kernel, binding, cost = best_match(Product(lower, b), default_registry, FlopMetric())
    assert kernel.name == "TRMM"
    assert binding.dims == (10, 5, 10)
    assert cost.scalar_value == 500


def test_no_match_for_two_inverses(default_registry):
    a = Modified(UnaryMod.INVERSE, ref("A", 5, 5))
    b = Modified(UnaryMod.INVERSE, ref("B", 5, 5))
    assert match(Product(a, b), default_registry) == []
    with pytest.raises(NoMatch):
        best_match(Product(a, b), default_registry, FlopMetric())


def test_flag_derivation(default_registry):
    """Test side, uplo and trans flags for triangular kernels"""
    lower = ref("L", 8, 8, Property.LOWER_TRIANGULAR)
    b = ref("B", 8, 4)
    kernel, binding, _ = best_match(
        Product(Modified(UnaryMod.INVERSE, lower), b), default_registry, FlopMetric()
    )
    assert kernel.name == "TRSM"
    flags = derive_flags(kernel, binding)
    assert (flags["side"], flags["uplo"], flags["transX"]) == ("L", "L", "N")

    c = ref("C", 4, 4, Property.UPPER_TRIANGULAR)
    kernel, binding, _ = best_match(
        Product(b, Modified(UnaryMod.TRANSPOSE, c)), default_registry, FlopMetric()
    )
    assert kernel.name == "TRMM_R"
    flags = derive_flags(kernel, binding)
    assert (flags["side"], flags["uplo"], flags["transX"]) == ("R", "U", "T")


def test_registry_path_setting(mocker, tmp_path):
    """Test that the default registry follows the configured path"""
    from app.services import kernels

    path = tmp_path / "only.kernels"
    path.write_text("kernel ONLY pattern=X*Y cost=2*m*n*k\n")
    mocker.patch.object(config, "REGISTRY_PATH", str(path))
    kernels.default_registry.cache_clear()
    try:
        assert kernels.default_registry().names == ["ONLY"]
    finally:
        kernels.default_registry.cache_clear()
