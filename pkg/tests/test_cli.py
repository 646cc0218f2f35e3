import csv

import pytest

from dracert.cli import bench_cases, main
from dracert.pipeline import EXIT_ERROR, EXIT_OK, EXIT_TIMEOUT, RunReport


def test_synthesize_running_writes_checked_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["synthesize", "--builtin", "running", "--ninv", "1", "--out", str(out),
                 "--dump-smt", str(tmp_path / "q.smt2")])
    assert code == EXIT_OK
    for name in ("policy.txt", "certificate.txt", "report.csv", "trace.png", "rank.png"):
        assert (out / name).exists(), name
    assert (tmp_path / "q.smt2").read_text().startswith("(set-logic")
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert rows[0]["verdict"] == "certified"
    assert float(rows[0]["construct_ms"]) >= 0 and float(rows[0]["solve_ms"]) >= 0

    # the synthesized policy verifies, and the artifacts pass the standalone checker
    assert main(["verify", "--builtin", "running", "--policy", str(out / "policy.txt"),
                 "--out", str(tmp_path / "v"), "--no-plots"]) == EXIT_OK
    assert main(["check", "--builtin", "running", "--policy", str(out / "policy.txt"),
                 "--cert", str(out / "certificate.txt")]) == EXIT_OK
    assert main(["simulate", "--builtin", "running", "--policy", str(out / "policy.txt"),
                 "--cert", str(out / "certificate.txt")]) == EXIT_OK
    assert "reached target" in capsys.readouterr().out


def test_grid_file_input(tmp_path):
    grid = tmp_path / "tiny.grid"
    grid.write_text("I.G\n")
    assert main(["synthesize", str(grid), "--out", str(tmp_path / "o"), "--no-plots"]) == EXIT_OK


def test_missing_model_path(tmp_path, capsys):
    assert main(["synthesize", str(tmp_path / "nope.model")]) == EXIT_ERROR
    assert "cannot read" in capsys.readouterr().err


def test_policy_with_unknown_action(tmp_path):
    bad = tmp_path / "bad.policy"
    bad.write_text("p_0_0: x:1\n")
    assert main(["verify", "--builtin", "running", "--policy", str(bad)]) == EXIT_ERROR


def test_verify_without_policy_is_usage_error(tmp_path):
    grid = tmp_path / "tiny.grid"
    grid.write_text("I.G\n")
    assert main(["verify", str(grid)]) == EXIT_ERROR


def test_synthesis_timeout_exit_code(tmp_path):
    code = main(["synthesize", "--builtin", "grid8x8", "--timeout", "1",
                 "--out", str(tmp_path / "t"), "--no-plots"])
    assert code == EXIT_TIMEOUT


def test_bench_single_row(tmp_path, capsys):
    assert main(["bench", "--only", "pagerank", "--out", str(tmp_path), "--no-plots"]) == EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("pagerank")]
    assert len(lines) == 1 and "certified" in lines[0]
    rows = list(csv.DictReader((tmp_path / "bench.csv").open()))
    assert [r["model"] for r in rows] == ["pagerank"]


def test_bench_timeout_rows_marked(tmp_path, capsys):
    main(["bench", "--only", "grid8x8", "--tasks", "synthesize", "--timeout", "1",
          "--out", str(tmp_path)])
    assert "T/O" in capsys.readouterr().out
    assert (tmp_path / "bench.png").exists()


def test_bench_cases():
    assert bench_cases(["pagerank"]) == [("pagerank", "verify")]
    assert len(bench_cases()) == 9 + 7


def test_report_columns_are_stable():
    row = RunReport("verify", "x").row()
    assert tuple(row) == RunReport.COLUMNS


@pytest.mark.parametrize("argv", [["synthesize", "--builtin", "running", "--ninv", "0"],
                                  ["synthesize"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_ERROR
