"""The four decomposition algorithms, end to end.

Every algorithm starts from the copper-plate commitment and then fixes the
commitment while solving one AC-OPF per period:

1. hold back all commitment-stage real reserves, sequential OPFs with ramp
   tightening, reactive reserves allocated greedily;
2. sequential OPFs with ramp tightening, all reserves allocated greedily;
3. hold back the reserves of the top ``gamma`` providers, sequential OPFs with
   ramp tightening, reserves re-dispatched by LP;
4. as 3, but the OPFs run in parallel without ramp tightening and the
   trajectory is projected onto the ramp limits afterwards.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .acopf import build_acopf_problem, solve_acopf
from .acopf.flows import balance_residual, line_flows
from .model import (ACTIVE, REACTIVE, Case, CommitmentSchedule, DispatchState, FullSolution,
                    ReserveState, pwl_value, reachable_bounds)
from .reserves import (BoundOverrides, greedy_allocate, redispatch_reserves, reserve_objective,
                       tighten_bounds_from_reserves, trim_to_headroom)
from .uc import UcResult, solve_copperplate_uc

log = logging.getLogger(__name__)

ALGORITHMS = (1, 2, 3, 4)


def default_threads() -> int:
    """Worker count from the ``ACUC_THREADS`` environment variable, 1 if unset."""
    raw = os.environ.get("ACUC_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


@dataclass
class RunOptions:
    algorithm: int = 3
    gamma: float = 0.05
    thread_count: int = field(default_factory=lambda: default_threads())
    uc_time_limit_s: float | None = 7200.0
    uc_gap: float = 1e-4
    uc_backend: str = "auto"
    opf_primal_tol: float = 1e-3
    opf_dual_tol: float = 1.0
    opf_max_iter: int = 300
    seed: int = 0
    guard: bool = True
    line_limits: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.thread_count < 1:
            raise ValueError("thread_count must be at least 1")


@dataclass
class RunStats:
    algorithm: int = 0
    case_name: str = ""
    times: dict[str, float] = field(default_factory=dict)
    opf_times: list[float] = field(default_factory=list)
    opf_iterations: list[int] = field(default_factory=list)
    opf_status: list[str] = field(default_factory=list)
    thread_count: int = 1
    events: list[tuple] = field(default_factory=list)
    overrides: int = 0
    objective: float = float("nan")

    def add_time(self, stage: str, seconds: float) -> None:
        self.times[stage] = self.times.get(stage, 0.0) + seconds

    @property
    def total(self) -> float:
        return self.times.get("total", sum(v for k, v in self.times.items() if k != "total"))

    def as_dict(self) -> dict:
        return {"algorithm": self.algorithm, "case": self.case_name, "times": dict(self.times), "opf_times": list(self.opf_times),
                "opf_iterations": list(self.opf_iterations), "opf_status": list(self.opf_status),
                "thread_count": self.thread_count, "overrides": self.overrides,
                "events": [list(map(_plain, e)) for e in self.events], "objective": self.objective}


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


# ---------------------------------------------------------------------------
# ramping


def _rates(case: Case):
    devs = case.devices
    return (np.array([d.p_ru for d in devs]), np.array([d.p_rd for d in devs]),
            np.array([d.p_ru_su for d in devs]), np.array([d.p_rd_sd for d in devs]))


def ramp_window(case: Case, commitment: CommitmentSchedule, p_prev, t: int):
    """Vectorized ramp envelope of every device at ``t`` given the settled ``p_prev``."""
    ru, rd, rusu, rdsd = _rates(case)
    u, su = commitment.u_on[:, t], commitment.u_su[:, t]
    up = ru * (u - su) + rusu * (su + 1 - u)
    down = rd * u + rdsd * (1 - u)
    d = case.durations[t]
    return p_prev - d * down, p_prev + d * up


def _previous_p(case: Case, p: np.ndarray, t: int) -> np.ndarray:
    if t == 0:
        return np.array([dev.initial_p for dev in case.devices])
    return p[:, t - 1]


def _intersect_or_clamp(lo, hi, lo2, hi2, events, tag, t):
    """Intersect intervals; where empty, collapse to the point of [lo, hi] nearest [lo2, hi2]."""
    new_lo, new_hi = np.maximum(lo, lo2), np.minimum(hi, hi2)
    bad = new_lo > new_hi
    if np.any(bad):
        point = np.where(hi[bad] < lo2[bad], hi[bad], lo[bad])
        new_lo[bad] = point
        new_hi[bad] = point
        for j in np.flatnonzero(bad):
            events.append((tag, int(j), t))
    return new_lo, new_hi


def period_bounds(case: Case, commitment: CommitmentSchedule, t: int, overrides: BoundOverrides,
                  p_prev=None, reach=None, events=None):
    """Real-power bounds for the OPF at ``t``.

    Static semicontinuous bounds, narrowed to the ramp envelope around
    ``p_prev`` and the horizon-feasible set ``reach`` when given, then to the
    reserve overrides.  An override incompatible with the rest is dropped in
    favour of the nearest admissible point and the conflict recorded.
    """
    events = [] if events is None else events
    u = commitment.u_on[:, t]
    lo = case.p_min[:, t] * u
    hi = case.p_max[:, t] * u
    if reach is not None:
        lo, hi = _intersect_or_clamp(lo, hi, reach[0][:, t], reach[1][:, t], events, "reach_conflict", t)
    if p_prev is not None:
        env_lo, env_hi = ramp_window(case, commitment, p_prev, t)
        lo, hi = _intersect_or_clamp(env_lo, env_hi, lo, hi, events, "ramp_conflict", t)
    mask = overrides.mask[:, t]
    if np.any(mask):
        o_lo = np.where(mask, overrides.p_lo[:, t], -np.inf)
        o_hi = np.where(mask, overrides.p_hi[:, t], np.inf)
        lo, hi = _intersect_or_clamp(lo, hi, o_lo, o_hi, events, "bound_conflict", t)
    return lo, hi


def ramp_tighten(case: Case, commitment: CommitmentSchedule, p_prev, t: int,
                 overrides: BoundOverrides | None = None, events=None):
    """Bounds at ``t``: ramp envelope from ``p_prev`` intersected with static bounds and overrides."""
    overrides = overrides if overrides is not None else BoundOverrides.none(case)
    return period_bounds(case, commitment, t, overrides, p_prev=p_prev,
                         reach=reachable_bounds(case, commitment, from_initial=True), events=events)


def ramp_project(case: Case, commitment: CommitmentSchedule, p: np.ndarray) -> np.ndarray:
    """Forward pass clipping each period into the ramp window of the projected previous one.

    The window is also intersected with the horizon-feasible set, so the pass
    never runs into an empty window later.  Feasible trajectories are returned
    unchanged.
    """
    flo, fhi = reachable_bounds(case, commitment)
    out = np.array(p, dtype=float, copy=True)
    for t in range(case.T):
        prev = _previous_p(case, out, t)
        lo, hi = ramp_window(case, commitment, prev, t)
        lo, hi = _intersect_or_clamp(lo, hi, flo[:, t], fhi[:, t], [], "", t)
        out[:, t] = np.clip(out[:, t], lo, hi)
    return out


# ---------------------------------------------------------------------------
# OPF fan-out


def _opf_task(args):
    problem, primal_tol, dual_tol, max_iter = args
    start = time.perf_counter()
    res = solve_acopf(problem, primal_tol=primal_tol, dual_tol=dual_tol, max_iter=max_iter)
    return res, time.perf_counter() - start


def _store_period(case: Case, dispatch: DispatchState, problem, res, t: int) -> None:
    dispatch.p[:, t] = 0.0
    dispatch.q[:, t] = 0.0
    dispatch.p[problem.device_ids, t] = res.p
    dispatch.q[problem.device_ids, t] = res.q
    dispatch.v[:, t] = res.v
    dispatch.theta[:, t] = res.theta
    for arr, vals in ((dispatch.p_fr, res.p_fr), (dispatch.q_fr, res.q_fr),
                      (dispatch.p_to, res.p_to), (dispatch.q_to, res.q_to)):
        arr[:, t] = 0.0
        arr[problem.line_ids, t] = vals
    dispatch.p_mismatch[:, t] = res.p_mismatch
    dispatch.q_mismatch[:, t] = res.q_mismatch


def _worker_count(options: RunOptions) -> int:
    return max(1, int(options.thread_count))


# ---------------------------------------------------------------------------
# objective as seen by the solver


def solver_objective(case: Case, commitment: CommitmentSchedule, dispatch: DispatchState,
                     reserves: ReserveState) -> float:
    """Market surplus of the solution: values minus costs minus all soft-constraint penalties."""
    d = case.durations
    surplus = 0.0
    for j, dev in enumerate(case.devices):
        for t in range(case.T):
            if commitment.u_on[j, t]:
                surplus += case.sign[j] * -d[t] * pwl_value(dev.cost_curve[t], dispatch.p[j, t])
                surplus -= d[t] * dev.on_cost
            surplus -= commitment.u_su[j, t] * dev.su_cost + commitment.u_sd[j, t] * dev.sd_cost
    mismatch = np.abs(dispatch.p_mismatch).sum(axis=0) + np.abs(dispatch.q_mismatch).sum(axis=0)
    surplus -= case.balance_penalty * float(mismatch @ d)
    surplus -= reserve_objective(case, reserves)
    return float(surplus)


def _refresh_mismatch(case: Case, dispatch: DispatchState) -> None:
    dp, dq = balance_residual(case, dispatch.p, dispatch.q, dispatch.p_fr, dispatch.q_fr,
                              dispatch.p_to, dispatch.q_to)
    dispatch.p_mismatch[:] = dp
    dispatch.q_mismatch[:] = dq


# ---------------------------------------------------------------------------
# driver


def run(case: Case, options: RunOptions | None = None, uc: UcResult | None = None):
    """Run one algorithm; returns the full solution and stage statistics.

    ``uc`` lets callers reuse a copper-plate commitment (it must include
    reserves); otherwise it is solved here.
    """
    opts = options or RunOptions()
    stats = RunStats(algorithm=opts.algorithm, case_name=case.name, thread_count=_worker_count(opts))
    t_start = time.perf_counter()

    tic = time.perf_counter()
    if uc is None:
        uc = solve_copperplate_uc(case, include_reserves=True, gap_tol=opts.uc_gap,
                                  time_limit_s=opts.uc_time_limit_s, backend=opts.uc_backend)
    stats.add_time("uc", time.perf_counter() - tic)
    commitment = uc.commitment.copy()
    uc_reserves = uc.reserves if uc.reserves is not None else ReserveState.zeros(case)

    tic = time.perf_counter()
    if opts.algorithm == 1:
        overrides = tighten_bounds_from_reserves(case, commitment, uc_reserves, 1.0, opts.guard)
    elif opts.algorithm in (3, 4):
        overrides = tighten_bounds_from_reserves(case, commitment, uc_reserves, opts.gamma, opts.guard)
    else:
        overrides = BoundOverrides.none(case)
    stats.events.extend(overrides.events)
    stats.overrides = overrides.count
    stats.add_time("tighten", time.perf_counter() - tic)

    dispatch = DispatchState.empty(case)
    q_lo_all = case.q_min * commitment.u_on
    q_hi_all = case.q_max * commitment.u_on
    tol = (opts.opf_primal_tol, opts.opf_dual_tol, opts.opf_max_iter)

    tic = time.perf_counter()
    reach = reachable_bounds(case, commitment, from_initial=True)
    if opts.algorithm in (1, 2, 3):
        for t in range(case.T):
            p_prev = _previous_p(case, dispatch.p, t)
            lo, hi = period_bounds(case, commitment, t, overrides, p_prev=p_prev, reach=reach,
                                   events=stats.events)
            problem = build_acopf_problem(case, t, commitment.u_on[:, t], lo, hi,
                                          q_lo_all[:, t], q_hi_all[:, t], opts.line_limits)
            res, secs = _opf_task((problem,) + tol)
            _store_period(case, dispatch, problem, res, t)
            stats.opf_times.append(secs)
            stats.opf_iterations.append(res.iterations)
            stats.opf_status.append(res.status)
    else:
        problems = []
        for t in range(case.T):
            lo, hi = period_bounds(case, commitment, t, overrides, reach=reach, events=stats.events)
            problems.append(build_acopf_problem(case, t, commitment.u_on[:, t], lo, hi,
                                                q_lo_all[:, t], q_hi_all[:, t], opts.line_limits))
        tasks = [(prob,) + tol for prob in problems]
        workers = _worker_count(opts)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
                results = list(pool.map(_opf_task, tasks))
        else:
            results = [_opf_task(task) for task in tasks]
        for t, (res, secs) in enumerate(results):
            _store_period(case, dispatch, problems[t], res, t)
            stats.opf_times.append(secs)
            stats.opf_iterations.append(res.iterations)
            stats.opf_status.append(res.status)
    stats.add_time("opf", time.perf_counter() - tic)

    if opts.algorithm == 4:
        tic = time.perf_counter()
        projected = ramp_project(case, commitment, dispatch.p)
        if not np.array_equal(projected, dispatch.p):
            dispatch.p = projected
            _refresh_mismatch(case, dispatch)
        stats.add_time("projection", time.perf_counter() - tic)

    tic = time.perf_counter()
    if opts.algorithm == 1:
        held = ReserveState(uc_reserves.r.copy(), uc_reserves.shortfall.copy())
        reactive = [k for k, p in enumerate(case.products) if p.power_kind == REACTIVE]
        held.r[:, reactive, :] = 0.0
        held = trim_to_headroom(case, commitment, dispatch, held, ACTIVE)
        reserves = greedy_allocate(case, commitment, dispatch, REACTIVE, base=held)
    elif opts.algorithm == 2:
        reserves = greedy_allocate(case, commitment, dispatch, "both")
    else:
        reserves = redispatch_reserves(case, commitment, dispatch, threads=1)
    stats.add_time("reserve", time.perf_counter() - tic)

    stats.objective = solver_objective(case, commitment, dispatch, reserves)
    stats.times["total"] = time.perf_counter() - t_start
    meta = {"algorithm": opts.algorithm, "gamma": opts.gamma, "objective": stats.objective,
            "uc_objective": -uc.objective, "uc_status": uc.status}
    return FullSolution(commitment, dispatch, reserves, meta), stats
