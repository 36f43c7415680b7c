import json
import subprocess
import sys

import pytest

from acuc.cli import EXIT_INPUT, EXIT_OK, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--buses", "5", "--devices", "6", "--periods", "3", "--seed", "4",
                 "--out", str(d / "case.json")]) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def solved(workdir):
    code = main(["solve", "--case", str(workdir / "case.json"), "--algorithm", "3", "--threads", "1",
                 "--out", str(workdir / "sol.json"), "--stats", str(workdir / "stats.json")])
    assert code == EXIT_OK
    return workdir


def test_gen_preset(tmp_path):
    out = tmp_path / "c.json"
    assert main(["gen", "--preset", "goc73", "--periods", "1", "--out", str(out)]) == EXIT_OK
    assert len(json.loads(out.read_text())["buses"]) == 73


def test_eval_with_best_known_equal_to_objective(solved, capsys):
    stats = json.loads((solved / "stats.json").read_text())
    code = main(["eval", "--case", str(solved / "case.json"), "--solution", str(solved / "sol.json"),
                 "--best-known", repr(stats["objective"]), "--out", str(solved / "rep.csv")])
    assert code == EXIT_OK
    assert "gap 0.00%" in capsys.readouterr().out
    assert (solved / "rep.csv").read_text().startswith("objective,")


def test_eval_json_report(solved):
    out = solved / "rep.json"
    assert main(["eval", "--case", str(solved / "case.json"), "--solution", str(solved / "sol.json"),
                 "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["violations"] == []


def test_gamma_percent_alias(workdir):
    a, b = workdir / "a.json", workdir / "b.json"
    base = ["solve", "--case", str(workdir / "case.json"), "--algorithm", "4", "--threads", "1"]
    assert main(base + ["--gamma", "0.5", "--out", str(a)]) == EXIT_OK
    assert main(base + ["--gamma-percent", "50", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv", [
    ["solve", "--case", "CASE", "--algorithm", "7", "--out", "x.json"],
    ["solve", "--case", "CASE", "--algorithm", "3", "--gamma", "2", "--out", "x.json"],
    ["solve", "--case", "CASE", "--algorithm", "3", "--threads", "0", "--out", "x.json"],
    ["solve", "--case", "missing.json", "--algorithm", "3", "--out", "x.json"],
    ["gen", "--buses", "5", "--out", "x.json"],
    ["gen", "--buses", "1", "--devices", "3", "--out", "x.json"],
    ["report"],
])
def test_invalid_input_exits_2(workdir, argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    argv = [str(workdir / "case.json") if a == "CASE" else a for a in argv]
    assert main(argv) == EXIT_INPUT


def test_corrupted_solution_exits_2(solved, tmp_path):
    doc = json.loads((solved / "sol.json").read_text())
    for series in doc["dispatch"]["p"].values():
        series.pop()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["eval", "--case", str(solved / "case.json"), "--solution", str(bad)]) == EXIT_INPUT


def test_report_markdown(solved, capsys):
    assert main(["report", "--stats", str(solved / "stats.json"), "--format", "md"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("| run | case | algorithm |")


def test_module_entry_point(solved):
    proc = subprocess.run([sys.executable, "-m", "acuc.cli", "eval", "--case", str(solved / "case.json"),
                           "--solution", str(solved / "sol.json")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "objective" in proc.stdout
