import json

import pytest

from acuc.report import load_stats, plot_speedup, plot_stages, speedup_rows, stage_rows, to_csv, to_markdown


def _stats(threads, opf, total, case="c", algorithm=4):
    return {"case": case, "algorithm": algorithm, "thread_count": threads,
            "times": {"uc": 1.0, "tighten": 0.0, "opf": opf, "projection": 0.0, "reserve": 0.5, "total": total},
            "objective": 10.0}


def test_stage_rows_share():
    rows = stage_rows([_stats(1, 6.0, 8.0)])
    assert rows[0]["opf_share"] == pytest.approx(0.75)
    assert rows[0]["uc"] == 1.0


def test_speedup_against_single_thread():
    rows = stage_rows([_stats(1, 6.0, 8.0), _stats(2, 3.0, 4.0), _stats(8, 1.0, 2.0), _stats(2, 1.0, 5.0, case="d")])
    speed = speedup_rows(rows)
    assert [(r["threads"], r["speedup"]) for r in speed] == [(1, 1.0), (2, 2.0), (8, 4.0)]


def test_csv_and_markdown_agree():
    rows = stage_rows([_stats(1, 6.0, 8.0)])
    csv_text = to_csv(rows)
    md = to_markdown(rows)
    header = csv_text.splitlines()[0].split(",")
    assert md.splitlines()[0] == "| " + " | ".join(header) + " |"
    assert to_csv([]) == "" and to_markdown([]) == ""


def test_load_names_runs_by_file(tmp_path):
    path = tmp_path / "run_a.json"
    path.write_text(json.dumps(_stats(1, 1.0, 2.0)))
    assert load_stats([path])[0]["run"] == "run_a"


def test_plots_written(tmp_path):
    rows = stage_rows([_stats(1, 6.0, 8.0), _stats(2, 3.0, 4.0)])
    plot_stages(rows, tmp_path / "s.png")
    plot_speedup(speedup_rows(rows), tmp_path / "p.png")
    assert (tmp_path / "s.png").stat().st_size > 0 and (tmp_path / "p.png").stat().st_size > 0
