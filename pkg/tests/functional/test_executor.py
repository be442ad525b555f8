import numpy as np
import pytest

from app.core.errors import CheckFailed, SingularSystem
from app.models.expr import Property
from app.services.executor import (
    OpCounter,
    check_plan,
    check_properties,
    evaluate_naive,
    execute_plan,
    random_instantiate,
    relative_error,
    symm_left,
    sysv_left,
    verify_plan,
)
from app.services.parser import parse_definitions, parse_problem
from app.services.solver import solve_plan

SMALL_GEMM = """\
Matrix A (20, 20) <>
Matrix B (20, 20) <>
X := A * B
"""


def test_random_instances_honor_properties():
    """Test that generated matrices have their declared properties"""
    operands = parse_definitions(
        """
        Matrix S (12, 12) <SPD>
        Matrix D (12, 12) <Diagonal>
        Matrix L (12, 12) <LowerTriangular>
        Matrix U (12, 12) <UpperTriangular>
        Matrix Y (12, 12) <Symmetric>
        Matrix F (12, 7) <FullRank>
        Matrix G (12, 12) <FullRank>
        """
    )
    values = random_instantiate(operands, seed=5)
    for operand in operands:
        assert values[operand.name].shape == (operand.shape.rows, operand.shape.cols)
        assert check_properties(values[operand.name], operand.properties) == []


def test_random_instances_are_deterministic():
    operands = parse_definitions("Matrix A (4, 3) <>")
    first = random_instantiate(operands, seed=11)["A"]
    assert np.array_equal(first, random_instantiate(operands, seed=11)["A"])
    assert not np.array_equal(first, random_instantiate(operands, seed=12)["A"])


def test_random_instances_from_a_problem(atab_problem):
    """Test that a name to operand mapping and its operands give the same matrices"""
    from_mapping = random_instantiate(atab_problem.operands, seed=9)
    from_list = random_instantiate(atab_problem.definitions, seed=9)
    assert sorted(from_mapping) == ["A", "B"]
    for name, value in from_list.items():
        assert np.array_equal(from_mapping[name], value)


def test_check_properties_reports_violations():
    rng = np.random.default_rng(0)
    matrix = rng.uniform(-1, 1, size=(5, 5))
    violated = check_properties(matrix, [Property.SYMMETRIC, Property.LOWER_TRIANGULAR, Property.FULL_RANK])
    assert violated == [Property.SYMMETRIC, Property.LOWER_TRIANGULAR]
    assert check_properties(-np.eye(3), [Property.SPD]) == [Property.SPD]
    assert check_properties(np.ones((2, 3)), [Property.SYMMETRIC]) == [Property.SYMMETRIC]


def test_gemm_operation_count(gemm_registry):
    """Test that a 20x20x20 product counts 16000 operations"""
    problem = parse_problem(SMALL_GEMM)
    plan = solve_plan(problem.assignment, gemm_registry)
    values = random_instantiate(problem.operands, seed=1)
    result, report = execute_plan(plan, values)
    assert report.counters == {"GEMM": 16000}
    assert report.total_operations == 16000
    assert np.allclose(result, values["A"] @ values["B"])


def test_identity_operand(gemm_registry):
    problem = parse_problem(SMALL_GEMM)
    plan = solve_plan(problem.assignment, gemm_registry)
    values = random_instantiate(problem.operands, seed=2)
    values["A"] = np.eye(20)
    result, _ = execute_plan(plan, values)
    assert relative_error(result, values["B"]) < 1e-14


def test_in_place_kernels_agree_with_naive_evaluation(default_registry, table2_problem):
    """Test the triangular multiply and Cholesky solve plan numerically"""
    plan = solve_plan(table2_problem.assignment, default_registry)
    values = random_instantiate(table2_problem.operands, seed=3)
    result, report = verify_plan(table2_problem.assignment, plan, values)
    expected = np.linalg.solve(values["A"], values["B"] @ values["C"].T)
    assert relative_error(result, expected) < 1e-10
    assert report.passed
    # Triangular multiply counts match its cost formula exactly
    assert report.counters["TRMM_R"] == 36000


def test_gram_product_execution(default_registry, atab_problem):
    plan = solve_plan(atab_problem.assignment, default_registry)
    values = random_instantiate(atab_problem.operands, seed=4)
    result, report = verify_plan(atab_problem.assignment, plan, values)
    assert np.allclose(result, values["A"].T @ values["A"] @ values["B"])
    assert report.counters["SYRK"] == 20 * 21 // 2 * 39
    assert report.counters["SYMM"] == 20 * 20 * 15


def test_naive_evaluation_with_inverses(two_inverses_problem):
    values = random_instantiate(two_inverses_problem.operands, seed=6)
    result = evaluate_naive(two_inverses_problem.assignment, values)
    expected = np.linalg.inv(values["A"]) @ np.linalg.inv(values["B"]) @ values["C"]
    assert relative_error(result, expected) < 1e-10


def test_singular_systems(default_registry, two_inverses_problem):
    """Test that singular inputs raise instead of returning garbage"""
    plan = solve_plan(two_inverses_problem.assignment, default_registry)
    values = random_instantiate(two_inverses_problem.operands, seed=7)
    values["B"] = np.zeros((30, 30))
    with pytest.raises(SingularSystem):
        execute_plan(plan, values)
    with pytest.raises(SingularSystem):
        evaluate_naive(two_inverses_problem.assignment, values)


@pytest.mark.parametrize("name", ["atab", "two_inverses", "table2"])
def test_check_plan_passes(name, problem_texts, default_registry):
    problem = parse_problem(problem_texts[name])
    plan = solve_plan(problem.assignment, default_registry)
    report = check_plan(problem.assignment, plan, seed=0, trials=3)
    assert report.passed
    assert [trial.seed for trial in report.trials] == [0, 1, 2]
    assert report.max_relative_error < 1e-8
    assert sum(report.counters.values()) > 0


def test_check_plan_size_limit(default_registry, abcde_problem):
    plan = solve_plan(abcde_problem.assignment, default_registry)
    with pytest.raises(CheckFailed):
        check_plan(abcde_problem.assignment, plan, trials=1)


def test_check_plan_redraws_singular_trials(mocker, default_registry, two_inverses_problem):
    """Test that a singular trial is redrawn once and then reported"""
    from app.services import executor

    plan = solve_plan(two_inverses_problem.assignment, default_registry)
    mocker.patch.object(executor, "verify_plan", side_effect=SingularSystem("pivot below threshold"))
    report = check_plan(two_inverses_problem.assignment, plan, seed=0, trials=2)
    assert not report.passed
    assert [trial.seed for trial in report.trials] == [2, 3]
    assert all(trial.redrawn and trial.error for trial in report.trials)
    assert report.max_relative_error is None


def _problem(declarations: str, assignment: str) -> str:
    return "\n".join(line.strip() for line in declarations.strip().splitlines()) + f"\n{assignment}\n"


OPERANDS = """
    Matrix A (12, 12) <>
    Matrix B (12, 10) <>
    Matrix R (10, 12) <>
    Matrix G (12, 10) <>
    Matrix L (12, 12) <LowerTriangular>
    Matrix S (12, 12) <Symmetric>
    Matrix P (12, 12) <SPD>
    Matrix D (12, 12) <Diagonal>
    Vector u (12, 1) <>
    Vector v (12, 1) <>
    Vector w (10, 1) <>
"""

KERNEL_CHAINS = [
    ("GEMM", "X := A * B"),
    ("GEMV", "X := A * v"),
    ("DOT", "X := u^T * v"),
    ("GER", "X := u * w^T"),
    ("DIAGMM", "X := D * B"),
    ("DIAGMM_R", "X := R * D"),
    ("DIAGSV", "X := D^-1 * B"),
    ("DIAGSV_R", "X := R * D^-1"),
    ("TRMV", "X := L * v"),
    ("TRMM", "X := L * B"),
    ("TRMM_R", "X := R * L^T"),
    ("SYRK", "X := G^T * G"),
    ("SYMM", "X := S * B"),
    ("SYMM_R", "X := R * S"),
    ("TRSV", "X := L^-1 * v"),
    ("TRSM", "X := L^-T * B"),
    ("TRSM_R", "X := R * L^-1"),
    ("POSV", "X := P^-1 * B"),
    ("POSV_R", "X := R * P^-1"),
    ("SYSV", "X := S^-1 * B"),
    ("SYSV_R", "X := R * S^-1"),
    ("GESV", "X := A^-1 * B"),
    ("GESV_R", "X := R * A^-1"),
]


@pytest.mark.parametrize("kernel, assignment", KERNEL_CHAINS)
def test_operation_counts_follow_cost_formulas(kernel, assignment, default_registry):
    """Test each reference kernel's counter against its cost formula up to lower-order terms"""
    problem = parse_problem(_problem(OPERANDS, assignment))
    plan = solve_plan(problem.assignment, default_registry)
    assert [call.kernel for call in plan.calls] == [kernel]
    call = plan.calls[0]
    values = random_instantiate(problem.operands, seed=8)
    _, report = verify_plan(problem.assignment, plan, values)
    assert report.passed
    size = max(call.rows, call.cols)
    assert abs(report.call_counts[0] - call.cost.scalar_value) <= 2 * size**2


def test_symmetric_multiply_counts_match_formula_exactly():
    """Test S B with S 20x20 symmetric at 6000 counted multiply-adds"""
    problem = parse_problem(_problem("Matrix S (20, 20) <Symmetric>\nMatrix B (20, 15) <>", "X := S * B"))
    values = random_instantiate(problem.operands, seed=10)
    for uplo in ("L", "U"):
        ops = OpCounter()
        result = symm_left(values["S"], values["B"], lower=uplo == "L", ops=ops)
        assert ops.count == 6000
        assert relative_error(result, values["S"] @ values["B"]) < 1e-12


def test_symmetric_indefinite_solve():
    """Test the L D L^T solve on a symmetric matrix with negative eigenvalues"""
    rng = np.random.default_rng(12)
    raw = rng.uniform(-1, 1, size=(8, 8))
    a = (raw + raw.T) / 2 + np.diag([9.0, -9.0] * 4)
    y = rng.uniform(-1, 1, size=(8, 3))
    ops = OpCounter()
    result = sysv_left(a, y, ops)
    assert relative_error(result, np.linalg.solve(a, y)) < 1e-10
    assert ops.count > 0
    with pytest.raises(SingularSystem):
        sysv_left(np.zeros((3, 3)), np.ones((3, 1)), OpCounter())
