from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field

Number = Union[int, float]


# Plan IR


class OperandIR(BaseModel):
    name: str
    rows: int
    cols: int
    properties: list[str] = []


class CallOperandIR(BaseModel):
    name: str
    mod: str = ""


class KernelCallIR(BaseModel):
    kernel: str
    routine: str
    pattern: str
    inputs: list[CallOperandIR] = Field(min_length=2, max_length=2)
    output: str
    rows: int
    cols: int
    roles: dict[str, str] = {}
    flags: dict[str, str] = {}
    cost: list[Number] = []
    overwrites: Optional[str] = None
    template: Optional[str] = None


class PlanIR(BaseModel):
    version: Literal[1] = 1
    target: str
    result: str
    total_cost: list[Number] = []
    operands: list[OperandIR] = []
    calls: list[KernelCallIR] = []


# HTTP API


class SolveRequest(BaseModel):
    problem: str
    registry: Optional[str] = None
    metric: Optional[str] = None
    format: Literal["text", "blas", "ir"] = "text"


class SolveResponse(BaseModel):
    target: str
    total_cost: str
    format: str
    output: str
    plan: PlanIR


class CompareRequest(BaseModel):
    problem: str
    registry: Optional[str] = None
    metric: Optional[str] = None
    # Forced parenthesization as nested index lists, e.g. [[[0, 1], [2, 3]], 4].
    tree: Optional[list[Any]] = None


class StrategyRow(BaseModel):
    strategy: str
    cost: Optional[str] = None
    ratio: Optional[float] = None
    tree: Optional[str] = None
    error: Optional[str] = None


class CompareResponse(BaseModel):
    target: str
    rows: list[StrategyRow]


class CheckRequest(BaseModel):
    problem: str
    registry: Optional[str] = None
    seed: int = 0
    trials: int = Field(default=10, ge=1, le=100)


class TrialOut(BaseModel):
    seed: int
    relative_error: Optional[float] = None
    error: Optional[str] = None


class CheckResponse(BaseModel):
    passed: bool
    tolerance: float
    max_relative_error: Optional[float] = None
    trials: list[TrialOut]


class KernelOut(BaseModel):
    name: str
    pattern: str
    constraints: Optional[str] = None
    unit: Optional[str] = None
    routine: str
    cost: str
    template: Optional[str] = None
