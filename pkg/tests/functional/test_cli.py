import json

import pytest

from app.cli import main
from app.core import config

GEMM_ONLY = str(config.DATA_DIR / "gemm_only.kernels")


def test_solve_text(problem_file, problem_texts, capsys):
    """Test solving a problem file to a text plan"""
    path = problem_file(problem_texts["abcde"], "abcde.gmc")
    assert main(["solve", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("T1 := A B")
    assert out.rstrip().endswith("# X computed with cost 315546400")


def test_solve_blas(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["table2"], "table2.gmc")
    assert main(["solve", str(path), "--format", "blas"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "trmm!('R', 'L', 'T', 'N', 1.0, C, B)    # T1 := B C^T, overwrites B"
    assert lines[2] == "X = B"
    assert lines[3] == "# total cost: 153333"


def test_solve_ir(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["atab"], "atab.gmc")
    assert main(["solve", str(path), "--format", "ir"]) == 0
    document = json.loads(capsys.readouterr().out)
    assert [call["kernel"] for call in document["calls"]] == ["SYRK", "SYMM"]
    assert document["total_cost"] == [14000]


def test_solve_several_files_in_order(problem_file, problem_texts, capsys):
    """Test that concurrent solving keeps the input order"""
    paths = [
        str(problem_file(problem_texts[name], f"{name}.gmc"))
        for name in ("abcde", "atab", "two_inverses")
    ]
    assert main(["solve", *paths, "--jobs", "3"]) == 0
    out = capsys.readouterr().out
    positions = [out.index(f"# {path}") for path in paths]
    assert positions == sorted(positions)


def test_solve_reports_errors_per_file(problem_file, problem_texts, capsys):
    good = problem_file(problem_texts["atab"], "good.gmc")
    bad = problem_file("Matrix A (2, 2) <>\nX := A + A\n", "bad.gmc")
    assert main(["solve", str(bad), str(good)]) == 2
    captured = capsys.readouterr()
    assert "bad.gmc: error:" in captured.err
    assert "computed with cost 14000" in captured.out


def test_solve_unsolvable(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["two_inverses"], "inv.gmc")
    assert main(["solve", str(path), "--registry", GEMM_ONLY]) == 3
    assert "no parenthesization" in capsys.readouterr().err


def test_usage_errors(tmp_path, problem_file, problem_texts, capsys):
    """Test exit code 1 for unreadable inputs and bad options"""
    assert main(["solve", str(tmp_path / "missing.gmc")]) == 1
    path = problem_file(problem_texts["atab"], "atab.gmc")
    assert main(["solve", str(path), "--registry", str(tmp_path / "none.kernels")]) == 1
    assert main(["check", str(path), "--trials", "0"]) == 1
    with pytest.raises(SystemExit) as exc_info:
        main(["solve", str(path), "--format", "latex"])
    assert exc_info.value.code == 1
    capsys.readouterr()


def test_invalid_metric(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["atab"], "atab.gmc")
    assert main(["solve", str(path), "--metric", "seconds"]) == 2
    assert "error:" in capsys.readouterr().err


def test_output_file(tmp_path, problem_file, problem_texts):
    path = problem_file(problem_texts["atab"], "atab.gmc")
    target = tmp_path / "plan.txt"
    assert main(["solve", str(path), "--out", str(target)]) == 0
    assert "SYRK" in target.read_text()


def test_compare_with_forced_tree(problem_file, problem_texts, capsys):
    """Test the comparison table with a forced parenthesization"""
    path = problem_file(problem_texts["abcde"], "abcde.gmc")
    assert main(["compare", str(path), "--tree", "((A B)(C D)) E"]) == 0
    out = capsys.readouterr().out
    rows = {line.split()[0]: line for line in out.splitlines()[2:]}
    assert set(rows) == {"gmc", "classic-mc", "left-to-right", "armadillo", "forced"}
    assert "315546400" in rows["gmc"]
    assert "1.000" in rows["gmc"]
    assert "332189860" in rows["forced"]
    assert "1.053" in rows["forced"]


def test_compare_marks_unsolvable_rows(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["two_inverses"], "inv.gmc")
    assert main(["compare", str(path)]) == 0
    rows = {line.split()[0]: line for line in capsys.readouterr().out.splitlines()[2:]}
    assert "unsolvable" in rows["left-to-right"]
    assert "unsolvable" not in rows["gmc"]


def test_compare_with_bad_tree(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["abcde"], "abcde.gmc")
    assert main(["compare", str(path), "--tree", "(B A) C D E"]) == 2
    assert "--tree" in capsys.readouterr().err


def test_check(problem_file, problem_texts, capsys):
    """Test numeric verification from the command line"""
    path = problem_file(problem_texts["two_inverses"], "inv.gmc")
    assert main(["check", str(path), "--trials", "2", "--seed", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("seed 4: relative error")
    assert lines[-1].startswith("PASS")


def test_check_too_large(problem_file, problem_texts, capsys):
    path = problem_file(problem_texts["abcde"], "abcde.gmc")
    assert main(["check", str(path), "--trials", "1"]) == 4
    assert "check limit" in capsys.readouterr().err


def test_kernels(capsys):
    assert main(["kernels"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names[-1] == "GEMM"
    assert "POSV" in names
