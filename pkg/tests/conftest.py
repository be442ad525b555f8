import os

import pytest
from fastapi import FastAPI
from fastapi.testclient import TestClient

# Keep test runs independent from a developer's .env
os.environ.setdefault("GMC_LOG_LEVEL", "WARNING")

from app.api import chains
from app.core import config
from app.services.kernels import load_registry_file
from app.services.parser import parse_problem

GEMM_ONLY_PATH = config.DATA_DIR / "gemm_only.kernels"

ABCDE_PROBLEM = """\
# Sizes 130, 700, 383, 1340, 193, 900
Matrix A (130, 700) <>
Matrix B (700, 383) <>
Matrix C (383, 1340) <>
Matrix D (1340, 193) <>
Matrix E (193, 900) <>
X := A * B * C * D * E
"""

ATAB_PROBLEM = """\
Matrix A (20, 20) <FullRank>
Matrix B (20, 15) <>
X := A^T * A * B
"""

TWO_INVERSES_PROBLEM = """\
Matrix A (30, 30) <>
Matrix B (30, 30) <>
Matrix C (30, 10) <>
X := A^-1 * B^-1 * C
"""

TABLE2_PROBLEM = """\
Matrix A (40, 40) <SPD>
Matrix B (40, 30) <>
Matrix C (30, 30) <LowerTriangular>
X := A^-1 * B * C^T
"""


@pytest.fixture(scope="session")
def default_registry():
    """Embedded default registry."""
    return load_registry_file(config.DEFAULT_REGISTRY_PATH)


@pytest.fixture(scope="session")
def gemm_registry():
    """Registry with GEMM only."""
    return load_registry_file(GEMM_ONLY_PATH)


@pytest.fixture(scope="session")
def extended_registry():
    """Default registry plus explicit inversion kernels."""
    return load_registry_file(config.EXTENDED_REGISTRY_PATH)


@pytest.fixture
def abcde_problem():
    return parse_problem(ABCDE_PROBLEM)


@pytest.fixture
def atab_problem():
    return parse_problem(ATAB_PROBLEM)


@pytest.fixture
def two_inverses_problem():
    return parse_problem(TWO_INVERSES_PROBLEM)


@pytest.fixture
def table2_problem():
    return parse_problem(TABLE2_PROBLEM)


@pytest.fixture
def problem_texts():
    """Source text of the reference problems, by name."""
    return {
        "abcde": ABCDE_PROBLEM,
        "atab": ATAB_PROBLEM,
        "two_inverses": TWO_INVERSES_PROBLEM,
        "table2": TABLE2_PROBLEM,
    }


@pytest.fixture
def problem_file(tmp_path):
    """Write problem text to a file and return its path."""

    def write(text: str, name: str = "problem.gmc"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture(scope="function")
def test_app():
    """Create a test FastAPI app."""
    app = FastAPI()
    app.include_router(chains.router)
    return app


@pytest.fixture(scope="function")
def client(test_app):
    """Create a test client."""
    return TestClient(test_app)
