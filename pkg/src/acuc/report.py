"""Tabulate run statistics: stage-time breakdowns and thread speedups.

The tables are the primary output (CSV or markdown); PNG charts are an
optional convenience drawn from the same rows.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

STAGES = ("uc", "tighten", "opf", "projection", "reserve")
COLUMNS = ("run", "case", "algorithm", "threads", *STAGES, "total", "opf_share", "objective")


def load_stats(paths) -> list[dict]:
    out = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        data.setdefault("run", Path(path).stem)
        out.append(data)
    return out


def stage_rows(stats: list[dict]) -> list[dict]:
    """One row per run with per-stage seconds and the OPF share of the total."""
    rows = []
    for s in stats:
        times = s.get("times", {})
        total = float(times.get("total", sum(times.values())))
        row = {"run": s.get("run", ""), "case": s.get("case", ""), "algorithm": s.get("algorithm", ""),
               "threads": s.get("thread_count", 1)}
        for stage in STAGES:
            row[stage] = float(times.get(stage, 0.0))
        row["total"] = total
        row["opf_share"] = row["opf"] / total if total > 0 else 0.0
        row["objective"] = s.get("objective", float("nan"))
        rows.append(row)
    return rows


def speedup_rows(rows: list[dict]) -> list[dict]:
    """Speedup of each run over the single-thread run of the same case and algorithm."""
    base = {}
    for r in rows:
        if int(r["threads"]) == 1:
            base.setdefault((r["case"], r["algorithm"]), r["total"])
    out = []
    for r in rows:
        ref = base.get((r["case"], r["algorithm"]))
        if ref is None or r["total"] <= 0:
            continue
        out.append({"case": r["case"], "algorithm": r["algorithm"], "threads": r["threads"],
                    "total": r["total"], "speedup": ref / r["total"]})
    return sorted(out, key=lambda r: (r["case"], r["algorithm"], int(r["threads"])))


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def to_markdown(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(_fmt(r[c]) for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def plot_stages(rows: list[dict], path) -> None:
    """Stacked bars of stage times per run."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(rows) + 2), 3.5))
    labels = [str(r["run"]) for r in rows]
    bottom = [0.0] * len(rows)
    for stage in STAGES:
        vals = [r[stage] for r in rows]
        ax.bar(labels, vals, bottom=bottom, label=stage)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("seconds")
    ax.legend(fontsize="small")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_speedup(rows: list[dict], path) -> None:
    """Speedup against thread count, one line per case and algorithm."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["case"], r["algorithm"]), []).append(r)
    for (case, alg), rs in groups.items():
        ax.plot([int(r["threads"]) for r in rs], [r["speedup"] for r in rs], marker="o",
                label=f"{case} alg {alg}")
    ax.set_xlabel("threads")
    ax.set_ylabel("speedup")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
