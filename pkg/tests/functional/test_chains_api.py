from fastapi.testclient import TestClient

from app.main import app


def test_root():
    """Test the welcome endpoint of the application"""
    response = TestClient(app).get("/")
    assert response.status_code == 200
    assert response.json() == {"message": "Welcome to Matrix Chain Compiler API"}


def test_solve_chain(client, problem_texts):
    """Test solving a problem over HTTP"""
    response = client.post("/solve", json={"problem": problem_texts["abcde"]})
    assert response.status_code == 200
    data = response.json()
    assert data["target"] == "X"
    assert data["total_cost"] == "315546400"
    assert data["format"] == "text"
    assert data["output"].startswith("T1 := A B")
    assert len(data["plan"]["calls"]) == 4


def test_solve_chain_blas(client, problem_texts):
    response = client.post("/solve", json={"problem": problem_texts["table2"], "format": "blas"})
    assert response.status_code == 200
    assert response.json()["output"].splitlines()[-1] == "X = B"


def test_solve_with_inline_registry(client, problem_texts):
    """Test a request carrying its own kernel registry"""
    registry = "kernel GEMM pattern=X*Y|X^T*Y|X*Y^T|X^T*Y^T cost=2*m*n*k\n"
    response = client.post("/solve", json={"problem": problem_texts["atab"], "registry": registry})
    assert response.status_code == 200
    assert response.json()["total_cost"] == "24000"


def test_solve_with_vector_metric(client, problem_texts):
    response = client.post(
        "/solve", json={"problem": problem_texts["atab"], "metric": "vector:flops,calls"}
    )
    assert response.status_code == 200
    assert response.json()["total_cost"] == "(14000, 2)"


def test_solve_errors(client, problem_texts):
    """Test status codes for invalid and unsolvable problems"""
    response = client.post("/solve", json={"problem": "Matrix A (2, 2) <>\nX := A + A"})
    assert response.status_code == 400
    assert "not supported" in response.json()["detail"]

    response = client.post(
        "/solve",
        json={"problem": problem_texts["two_inverses"], "registry": "kernel GEMM pattern=X*Y cost=2*m*n*k"},
    )
    assert response.status_code == 422

    response = client.post("/solve", json={"problem": problem_texts["atab"], "registry": "kernel BAD"})
    assert response.status_code == 400

    response = client.post("/solve", json={"problem": problem_texts["atab"], "format": "latex"})
    assert response.status_code == 422


def test_request_registry_cannot_read_files(client, problem_texts, tmp_path):
    """Test that an inline registry may not include files from the server"""
    secret = tmp_path / "secret.kernels"
    secret.write_text("s3cr3t-value line\n")
    response = client.post(
        "/solve", json={"problem": problem_texts["atab"], "registry": f"include {secret}"}
    )
    assert response.status_code == 400
    assert "s3cr3t-value" not in response.json()["detail"]
    assert str(secret) not in response.json()["detail"]

    response = client.post(
        "/solve", json={"problem": problem_texts["atab"], "registry": "include default"}
    )
    assert response.status_code == 200


def test_request_metric_cannot_read_tables(client, problem_texts, tmp_path):
    """Test that table metrics are refused over HTTP"""
    table = tmp_path / "costs.table"
    table.write_text("GEMM 10 10 10 value=1\n")
    for url in ("/solve", "/compare"):
        response = client.post(url, json={"problem": problem_texts["atab"], "metric": f"table:{table}"})
        assert response.status_code == 400
        assert "table" in response.json()["detail"]


def test_compare_chain(client, problem_texts):
    """Test the strategy comparison with a forced tree"""
    response = client.post(
        "/compare", json={"problem": problem_texts["abcde"], "tree": [[[0, 1], [2, 3]], 4]}
    )
    assert response.status_code == 200
    rows = {row["strategy"]: row for row in response.json()["rows"]}
    assert rows["gmc"]["ratio"] == 1.0
    assert rows["forced"]["cost"] == "332189860"
    assert rows["forced"]["tree"] == "((A B) (C D)) E"


def test_compare_unsolvable_rows(client, problem_texts):
    response = client.post("/compare", json={"problem": problem_texts["two_inverses"]})
    assert response.status_code == 200
    rows = {row["strategy"]: row for row in response.json()["rows"]}
    assert rows["left-to-right"]["cost"] is None
    assert rows["left-to-right"]["error"]


def test_compare_bad_tree(client, problem_texts):
    response = client.post("/compare", json={"problem": problem_texts["abcde"], "tree": [0, 1]})
    assert response.status_code == 400


def test_check_chain(client, problem_texts):
    """Test numeric verification over HTTP"""
    response = client.post("/check", json={"problem": problem_texts["table2"], "seed": 1, "trials": 2})
    assert response.status_code == 200
    data = response.json()
    assert data["passed"] is True
    assert [trial["seed"] for trial in data["trials"]] == [1, 2]
    assert data["max_relative_error"] < data["tolerance"]


def test_check_chain_too_large(client, problem_texts):
    response = client.post("/check", json={"problem": problem_texts["abcde"], "trials": 1})
    assert response.status_code == 500


def test_check_trials_are_bounded(client, problem_texts):
    response = client.post("/check", json={"problem": problem_texts["atab"], "trials": 0})
    assert response.status_code == 422


def test_list_kernels(client):
    response = client.get("/kernels")
    assert response.status_code == 200
    kernels = response.json()
    assert kernels[-1]["name"] == "GEMM"
    posv = next(k for k in kernels if k["name"] == "POSV")
    assert posv["constraints"] == "SPD@X"
    assert posv["template"].startswith("posv!(")
