"""Dense reference execution of plans.

The routines below are deliberately plain loops over numpy rows and columns
so that multiply and add operations can be counted. They are a correctness
oracle for plans, not a fast BLAS.

Counted operations per call (mul + add, divisions and square roots count 1):

    gemm          2mnk
    trmm, trsm    m^2 n (left) or m n^2 (right)
    symm          m^2 n multiply-adds over one stored triangle
    syrk          m(m+1)/2 (2k-1)
    posv          about m^3/3 + 2 m^2 n (Cholesky plus two substitutions)
    sysv          about m^3/3 + 2 m^2 n (unpivoted L D L^T)
    gesv          about 2m^3/3 + 2 m^2 n (LU with partial pivoting)
    diagmm/diagsv mn
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from app.core import config
from app.core.errors import CheckFailed, NumericError, ShapeMismatch, SingularSystem
from app.models.expr import Chain, Operand, Property, UnaryMod
from app.services.solver import KernelCall, Plan

logger = logging.getLogger(__name__)

PIVOT_THRESHOLD = 1e-12


class OpCounter:
    def __init__(self):
        self.count = 0

    def add(self, amount: int) -> None:
        self.count += int(amount)


@dataclass
class ExecReport:
    counters: dict[str, int] = field(default_factory=dict)
    call_counts: list[int] = field(default_factory=list)
    max_relative_error: Optional[float] = None
    tolerance: float = config.TOLERANCE

    @property
    def total_operations(self) -> int:
        return sum(self.call_counts)

    @property
    def passed(self) -> bool:
        return self.max_relative_error is not None and self.max_relative_error < self.tolerance


def random_instantiate(
    operands: Union[Mapping[str, Operand], Iterable[Operand]], seed: int
) -> dict[str, np.ndarray]:
    """Random matrices honoring each operand's properties, deterministic per seed.

    ``operands`` is either a name to operand mapping or an iterable of
    operands. Square operands other than SPD ones are shifted by (rows + 1) I,
    which keeps every solve against them well conditioned.
    """
    if isinstance(operands, Mapping):
        operands = operands.values()
    rng = np.random.default_rng(seed)
    values = {}
    for operand in operands:
        if operand.name in values:
            continue
        rows, cols = operand.shape.rows, operand.shape.cols
        raw = rng.uniform(-1.0, 1.0, size=(rows, cols))
        props = operand.properties
        shift = (rows + 1) * np.eye(rows) if rows == cols else 0.0
        if Property.SPD in props:
            matrix = raw @ raw.T + rows * np.eye(rows)
        elif Property.DIAGONAL in props:
            matrix = np.diag(np.diag(raw)) + shift
        elif Property.LOWER_TRIANGULAR in props:
            matrix = np.tril(raw) + shift
        elif Property.UPPER_TRIANGULAR in props:
            matrix = np.triu(raw) + shift
        elif Property.SYMMETRIC in props:
            matrix = (raw + raw.T) / 2 + shift
        else:
            matrix = raw + shift
        values[operand.name] = matrix
    return values


def relative_error(result: np.ndarray, expected: np.ndarray) -> float:
    if result.shape != expected.shape:
        raise ShapeMismatch(f"result shape {result.shape} differs from {expected.shape}")
    scale = np.linalg.norm(expected)
    diff = np.linalg.norm(result - expected)
    return float(diff / scale) if scale > 0 else float(diff)


# Reference kernels


def _check_pivot(pivot: float, column: np.ndarray, what: str) -> None:
    scale = float(np.max(np.abs(column))) if column.size else 0.0
    if scale == 0.0 or abs(pivot) < PIVOT_THRESHOLD * scale:
        raise SingularSystem(f"{what}: pivot {pivot:.3g} below threshold")


def gemm(a: np.ndarray, b: np.ndarray, ops: OpCounter) -> np.ndarray:
    m, k = a.shape
    if b.shape[0] != k:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    n = b.shape[1]
    out = np.zeros((m, n))
    for p in range(k):
        out += np.outer(a[:, p], b[p, :])
        ops.add(2 * m * n)
    return out


def trmm_left(t: np.ndarray, y: np.ndarray, lower: bool, ops: OpCounter) -> np.ndarray:
    m, n = y.shape
    if t.shape != (m, m):
        raise ShapeMismatch(f"triangular factor {t.shape} does not match {y.shape}")
    out = np.zeros((m, n))
    for i in range(m):
        lo, hi = (0, i + 1) if lower else (i, m)
        out[i, :] = t[i, lo:hi] @ y[lo:hi, :]
        ops.add((2 * (hi - lo) - 1) * n)
    return out


def trsm_left(
    t: np.ndarray, y: np.ndarray, lower: bool, ops: OpCounter, unit: bool = False
) -> np.ndarray:
    m, n = y.shape
    if t.shape != (m, m):
        raise ShapeMismatch(f"triangular factor {t.shape} does not match {y.shape}")
    z = np.zeros((m, n))
    order = range(m) if lower else range(m - 1, -1, -1)
    for i in order:
        lo, hi = (0, i) if lower else (i + 1, m)
        row = y[i, :] - t[i, lo:hi] @ z[lo:hi, :]
        ops.add(2 * (hi - lo) * n)
        if unit:
            z[i, :] = row
            continue
        _check_pivot(t[i, i], t[:, i], "triangular solve")
        z[i, :] = row / t[i, i]
        ops.add(n)
    return z


def symmetric_from(s: np.ndarray, lower: bool) -> np.ndarray:
    if lower:
        return np.tril(s) + np.tril(s, -1).T
    return np.triu(s) + np.triu(s, 1).T


def symm_left(s: np.ndarray, y: np.ndarray, lower: bool, ops: OpCounter) -> np.ndarray:
    """S Y reading only the stored triangle of S.

    Counted in multiply-adds, one per stored entry and use; SYMM's cost
    formula m^2 n is stated in that unit.
    """
    m, n = y.shape
    if s.shape != (m, m):
        raise ShapeMismatch(f"symmetric factor {s.shape} does not match {y.shape}")
    out = np.zeros((m, n))
    for i in range(m):
        if lower:
            out[i, :] += s[i, : i + 1] @ y[: i + 1, :]
            out[:i, :] += np.outer(s[i, :i], y[i, :])
            ops.add((2 * i + 1) * n)
        else:
            out[i, :] += s[i, i:] @ y[i:, :]
            out[i + 1 :, :] += np.outer(s[i, i + 1 :], y[i, :])
            ops.add((2 * (m - i) - 1) * n)
    return out


def syrk(b: np.ndarray, ops: OpCounter) -> np.ndarray:
    """B B^T computed on the lower triangle and mirrored."""
    m, k = b.shape
    out = np.zeros((m, m))
    for i in range(m):
        out[i, : i + 1] = b[: i + 1, :] @ b[i, :]
        ops.add((i + 1) * (2 * k - 1))
    return symmetric_from(out, lower=True)


def cholesky(a: np.ndarray, ops: OpCounter) -> np.ndarray:
    m = a.shape[0]
    low = np.zeros((m, m))
    for j in range(m):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        ops.add(2 * j + 1)
        if d <= PIVOT_THRESHOLD * max(abs(a[j, j]), 1.0):
            raise SingularSystem(f"matrix is not positive definite at column {j}")
        low[j, j] = np.sqrt(d)
        below = a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]
        low[j + 1 :, j] = below / low[j, j]
        ops.add((m - j - 1) * (2 * j + 1))
    return low


def ldlt(a: np.ndarray, ops: OpCounter) -> tuple[np.ndarray, np.ndarray]:
    """Unpivoted L D L^T of a symmetric matrix: (unit lower L, diagonal of D)."""
    m = a.shape[0]
    low = np.eye(m)
    d = np.zeros(m)
    for j in range(m):
        w = low[j, :j] * d[:j]
        d[j] = a[j, j] - w @ low[j, :j]
        ops.add(3 * j)
        _check_pivot(d[j], a[:, j], "symmetric factorization")
        low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ w) / d[j]
        ops.add((m - j - 1) * (2 * j + 1))
    return low, d


def lu_factor(a: np.ndarray, ops: OpCounter) -> tuple[np.ndarray, np.ndarray]:
    """LU with partial pivoting: returns (packed LU, row permutation)."""
    m = a.shape[0]
    lu = a.astype(float).copy()
    perm = np.arange(m)
    for j in range(m):
        pivot_row = j + int(np.argmax(np.abs(lu[j:, j])))
        _check_pivot(lu[pivot_row, j], a[:, j], "LU factorization")
        if pivot_row != j:
            lu[[j, pivot_row]] = lu[[pivot_row, j]]
            perm[[j, pivot_row]] = perm[[pivot_row, j]]
        lu[j + 1 :, j] /= lu[j, j]
        lu[j + 1 :, j + 1 :] -= np.outer(lu[j + 1 :, j], lu[j, j + 1 :])
        rest = m - j - 1
        ops.add(rest + 2 * rest * rest)
    return lu, perm


def gesv_left(a: np.ndarray, y: np.ndarray, ops: OpCounter) -> np.ndarray:
    if a.shape[0] != a.shape[1] or a.shape[1] != y.shape[0]:
        raise ShapeMismatch(f"cannot solve {a.shape} against {y.shape}")
    lu, perm = lu_factor(a, ops)
    z = trsm_left(lu, y[perm, :], lower=True, ops=ops, unit=True)
    return trsm_left(lu, z, lower=False, ops=ops)


def sysv_left(a: np.ndarray, y: np.ndarray, ops: OpCounter) -> np.ndarray:
    if a.shape[0] != a.shape[1] or a.shape[1] != y.shape[0]:
        raise ShapeMismatch(f"cannot solve {a.shape} against {y.shape}")
    low, d = ldlt(symmetric_from(a, lower=True), ops)
    z = trsm_left(low, y, lower=True, ops=ops, unit=True)
    z = z / d[:, None]
    ops.add(z.size)
    return trsm_left(low.T, z, lower=False, ops=ops, unit=True)


def posv_left(a: np.ndarray, y: np.ndarray, ops: OpCounter) -> np.ndarray:
    if a.shape[0] != a.shape[1] or a.shape[1] != y.shape[0]:
        raise ShapeMismatch(f"cannot solve {a.shape} against {y.shape}")
    low = cholesky(symmetric_from(a, lower=True), ops)
    z = trsm_left(low, y, lower=True, ops=ops)
    return trsm_left(low.T, z, lower=False, ops=ops)


def invert(a: np.ndarray, ops: OpCounter) -> np.ndarray:
    return gesv_left(a, np.eye(a.shape[0]), ops)


# Plan execution


def _value(values: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    try:
        return np.asarray(values[name], dtype=float)
    except KeyError:
        raise ShapeMismatch(f"no value bound to {name}") from None


def _apply(matrix: np.ndarray, mod: UnaryMod, ops: OpCounter) -> np.ndarray:
    if mod.inverted:
        matrix = invert(matrix, ops)
    return matrix.T if mod.transposed else matrix


def _run_call(call: KernelCall, values: Mapping[str, np.ndarray], ops: OpCounter) -> np.ndarray:
    left, right = _value(values, call.left.name), _value(values, call.right.name)
    routine = call.routine
    if routine in ("gemm", "getri"):
        return gemm(_apply(left, call.left.mod, ops), _apply(right, call.right.mod, ops), ops)
    if routine == "syrk":
        b = left.T if call.flags.get("transX") == "T" else left
        return syrk(b, ops)

    side = call.flags.get("side", "L")
    x_op, y_op = (call.left, call.right) if side == "L" else (call.right, call.left)
    x = _value(values, x_op.name)
    y = _value(values, y_op.name)
    if y_op.mod.transposed:
        y = y.T
    x_eff = x.T if x_op.mod.transposed else x
    # Right-side kernels solve or multiply the transposed problem.
    if side == "R":
        x_eff, y = x_eff.T, y.T
    lower = (call.flags.get("uplo", "L") == "L") != x_op.mod.transposed
    if side == "R":
        lower = not lower

    if routine == "diagmm":
        out = np.diag(x)[:, None] * y
        ops.add(y.size)
    elif routine == "diagsv":
        d = np.diag(x)
        for pivot in d:
            _check_pivot(pivot, d, "diagonal solve")
        out = y / d[:, None]
        ops.add(y.size)
    elif routine == "trmm":
        out = trmm_left(x_eff, y, lower, ops)
    elif routine == "trsm":
        out = trsm_left(x_eff, y, lower, ops)
    elif routine == "symm":
        out = symm_left(x, y, call.flags.get("uplo", "L") == "L", ops)
    elif routine == "posv":
        out = posv_left(x, y, ops)
    elif routine == "sysv":
        out = sysv_left(x_eff, y, ops)
    elif routine == "gesv":
        out = gesv_left(x_eff, y, ops)
    else:
        raise NumericError(f"no reference implementation for routine {routine!r}")
    return out.T if side == "R" else out


def execute_plan(
    plan: Plan, values: Mapping[str, np.ndarray]
) -> tuple[np.ndarray, ExecReport]:
    env = dict(values)
    report = ExecReport()
    for call in plan.calls:
        ops = OpCounter()
        result = _run_call(call, env, ops)
        if result.shape != (call.rows, call.cols):
            raise ShapeMismatch(
                f"{call.kernel} produced {result.shape}, expected {(call.rows, call.cols)}"
            )
        env[call.output] = result
        report.call_counts.append(ops.count)
        report.counters[call.kernel] = report.counters.get(call.kernel, 0) + ops.count
        logger.debug("%s := %s via %s, %d operations", call.output, call.expression, call.kernel, ops.count)
    return _value(env, plan.result), report


def evaluate_naive(chain: Chain, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """Left-to-right evaluation; inverses are applied as solves."""
    acc: Optional[np.ndarray] = None
    for factor in chain.factors:
        matrix = _value(values, factor.operand.name)
        if matrix.shape != (factor.operand.shape.rows, factor.operand.shape.cols):
            raise ShapeMismatch(
                f"{factor.operand.name} has shape {matrix.shape}, declared {factor.operand.shape}"
            )
        op = matrix.T if factor.mod.transposed else matrix
        try:
            if not factor.mod.inverted:
                acc = op if acc is None else acc @ op
            elif acc is None:
                acc = np.linalg.solve(op, np.eye(op.shape[0]))
            else:
                acc = np.linalg.solve(op.T, acc.T).T
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"{factor} is singular: {exc}") from exc
    return acc


def check_properties(
    matrix: np.ndarray, properties: Iterable[Property], tolerance: float = 1e-10
) -> list[Property]:
    """Properties from ``properties`` that ``matrix`` violates numerically.

    Off-pattern entries are compared relative to the largest entry.
    """
    scale = max(float(np.max(np.abs(matrix))) if matrix.size else 0.0, 1.0)
    limit = tolerance * scale
    violated = []
    for prop in properties:
        if prop is Property.FULL_RANK:
            ok = np.linalg.matrix_rank(matrix) == min(matrix.shape)
        elif matrix.shape[0] != matrix.shape[1]:
            ok = False
        elif prop is Property.LOWER_TRIANGULAR:
            ok = np.max(np.abs(np.triu(matrix, 1)), initial=0.0) <= limit
        elif prop is Property.UPPER_TRIANGULAR:
            ok = np.max(np.abs(np.tril(matrix, -1)), initial=0.0) <= limit
        elif prop is Property.DIAGONAL:
            ok = np.max(np.abs(matrix - np.diag(np.diag(matrix))), initial=0.0) <= limit
        elif prop is Property.SYMMETRIC:
            ok = np.max(np.abs(matrix - matrix.T), initial=0.0) <= limit
        else:
            ok = _is_spd(matrix, limit)
        if not ok:
            violated.append(prop)
    return violated


def _is_spd(matrix: np.ndarray, limit: float) -> bool:
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > limit:
        return False
    try:
        np.linalg.cholesky((matrix + matrix.T) / 2)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass
class TrialResult:
    seed: int
    relative_error: Optional[float]
    error: Optional[str] = None
    redrawn: bool = False


@dataclass
class CheckReport:
    trials: list[TrialResult]
    tolerance: float
    counters: dict[str, int] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> Optional[float]:
        errors = [t.relative_error for t in self.trials if t.relative_error is not None]
        return max(errors) if errors else None

    @property
    def passed(self) -> bool:
        return all(
            t.error is None and t.relative_error is not None and t.relative_error < self.tolerance
            for t in self.trials
        )


def verify_plan(
    chain: Chain, plan: Plan, values: Mapping[str, np.ndarray], tolerance: Optional[float] = None
) -> tuple[np.ndarray, ExecReport]:
    result, report = execute_plan(plan, values)
    report.tolerance = config.TOLERANCE if tolerance is None else tolerance
    report.max_relative_error = relative_error(result, evaluate_naive(chain, values))
    return result, report


def check_plan(
    chain: Chain,
    plan: Plan,
    seed: int = 0,
    trials: int = 10,
    tolerance: Optional[float] = None,
    max_size: Optional[int] = None,
) -> CheckReport:
    """Compare ``plan`` with naive evaluation on ``trials`` random instances.

    A trial hitting a singular system is redrawn once with another seed.
    """
    tolerance = config.TOLERANCE if tolerance is None else tolerance
    max_size = config.MAX_CHECK_SIZE if max_size is None else max_size
    if max(chain.sizes) > max_size:
        raise CheckFailed(
            f"dimensions up to {max(chain.sizes)} exceed the check limit of {max_size}"
        )
    operands = list(chain.operands.values())
    report = CheckReport([], tolerance)
    for trial in range(trials):
        trial_seed = seed + trial
        for attempt in range(2):
            values = random_instantiate(operands, trial_seed)
            try:
                _, exec_report = verify_plan(chain, plan, values, tolerance)
            except SingularSystem as exc:
                if attempt == 0:
                    logger.warning("Trial %d hit a singular system, redrawing: %s", trial, exc)
                    trial_seed += trials
                    continue
                report.trials.append(TrialResult(trial_seed, None, exc.message, redrawn=True))
                break
            for kernel, count in exec_report.counters.items():
                report.counters[kernel] = report.counters.get(kernel, 0) + count
            report.trials.append(
                TrialResult(trial_seed, exec_report.max_relative_error, redrawn=attempt > 0)
            )
            break
    logger.info(
        "Checked %s over %d trials: max error %s", chain, trials, report.max_relative_error
    )
    return report
