"""Command-line front end: ``acuc solve|eval|gen|report``.

Exit codes: 0 on success, 2 on invalid input, 3 on internal failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .case_io import (PRESETS, CaseValidationError, DimensionError, GeneratorSpec, InfeasibleSpecError,
                      SchemaError, generate_case, preset_spec, read_case, read_solution, write_case,
                      write_solution)

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
INPUT_ERRORS = (SchemaError, CaseValidationError, DimensionError, InfeasibleSpecError)


class InputError(Exception):
    pass


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _write(path: str, data: bytes | str) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    p.write_bytes(data)


def _gamma(args) -> float:
    if args.gamma_percent is not None:
        return args.gamma_percent / 100.0
    return args.gamma


def cmd_solve(args) -> int:
    from .orchestrator import RunOptions, run

    case = read_case(_read_bytes(args.case))
    try:
        opts = RunOptions(algorithm=args.algorithm, gamma=_gamma(args), thread_count=args.threads,
                          uc_time_limit_s=args.time_limit, guard=not args.no_guard,
                          line_limits=args.line_limits)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    solution, stats = run(case, opts)
    _write(args.out, write_solution(solution, case))
    if args.stats:
        _write(args.stats, json.dumps(stats.as_dict(), indent=1) + "\n")
    print(f"objective {stats.objective:.6f}  total {stats.total:.2f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluator import evaluate

    case = read_case(_read_bytes(args.case))
    solution = read_solution(_read_bytes(args.solution), case)
    report = evaluate(case, solution, reference_objective=args.best_known)
    print(report.summary())
    if args.out:
        _write(args.out, report.to_csv() if args.out.endswith(".csv") else report.to_json())
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        spec = _gen_spec(args)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    case = generate_case(spec)
    _write(args.out, write_case(case))
    print(f"{case.name}: {case.n_buses} buses, {case.n_devices} devices, {case.n_lines} lines, {case.T} periods")
    return EXIT_OK


def _gen_spec(args) -> GeneratorSpec:
    if args.preset:
        overrides = {"seed": args.seed}
        if args.periods is not None:
            overrides["n_periods"] = args.periods
        return preset_spec(args.preset, **overrides)
    if args.buses is None or args.devices is None:
        raise InputError("either --preset or both --buses and --devices are required")
    return GeneratorSpec(args.buses, args.devices, n_periods=args.periods or 48,
                         n_active_zones=args.active_zones, n_reactive_zones=args.reactive_zones,
                         seed=args.seed, capacity_margin=args.capacity_margin,
                         ramp_tightness=args.ramp_tightness)


def cmd_report(args) -> int:
    from . import report

    if not args.stats:
        raise InputError("report needs at least one --stats file")
    try:
        rows = report.stage_rows(report.load_stats(args.stats))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read stats: {exc}") from exc
    speed = report.speedup_rows(rows)
    render = report.to_csv if args.format == "csv" else report.to_markdown
    text = render(rows)
    if len(speed) > 1:
        text += "\n" + render(speed)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if args.plots:
        out = Path(args.plots)
        out.mkdir(parents=True, exist_ok=True)
        report.plot_stages(rows, out / "stages.png")
        if len(speed) > 1:
            report.plot_speedup(speed, out / "speedup.png")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .orchestrator import default_threads

    parser = argparse.ArgumentParser(prog="acuc", description="AC unit commitment by temporal decomposition")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a case with one of the four algorithms")
    p.add_argument("--case", required=True)
    p.add_argument("--algorithm", type=int, choices=(1, 2, 3, 4), required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float, default=0.05, help="fraction of reserve providers to fix")
    g.add_argument("--gamma-percent", type=float, default=None, help="the same fraction given in percent")
    p.add_argument("--threads", type=int, default=default_threads())
    p.add_argument("--time-limit", type=float, default=7200.0, help="commitment MIP time limit in seconds")
    p.add_argument("--no-guard", action="store_true", help="fix reserves without the local balance check")
    p.add_argument("--line-limits", action="store_true", help="penalize line overloads inside the OPF")
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="score a solution")
    p.add_argument("--case", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--best-known", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen", help="generate a random feasible case")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--buses", type=int)
    p.add_argument("--devices", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--active-zones", type=int, default=1)
    p.add_argument("--reactive-zones", type=int, default=1)
    p.add_argument("--capacity-margin", type=float, default=0.3)
    p.add_argument("--ramp-tightness", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("report", help="tabulate stage times and speedups from stats files")
    p.add_argument("--stats", nargs="*", default=[])
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out")
    p.add_argument("--plots", help="directory for optional PNG charts")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("acuc: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"acuc {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal failure")
        print(f"acuc {args.command}: internal failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
