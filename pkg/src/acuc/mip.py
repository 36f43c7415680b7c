"""Branch-and-bound over LP relaxations.

Branching picks the most fractional binary (lowest index on ties).  Nodes are
explored depth first until the first incumbent, then best bound first.  Large
models can instead be handed to the HiGHS MIP solver via ``backend='highs'``.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from .lp import INFEASIBLE, OPTIMAL, LinearProgram, solve_lp

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
LIMIT = "limit"

INT_TOL = 1e-6
BNB_MAX_BINARIES = 64


@dataclass
class MipProblem:
    lp: LinearProgram
    binary: np.ndarray  # boolean mask over the LP columns

    def __post_init__(self):
        self.binary = np.asarray(self.binary, dtype=bool)
        if np.any(self.lp.lo[self.binary] < 0) or np.any(self.lp.hi[self.binary] > 1):
            raise ValueError("binary variables must have bounds within [0, 1]")


@dataclass
class MipSolution:
    status: str
    x: np.ndarray
    objective: float
    bound: float
    gap: float
    nodes: int = 0
    backend: str = ""


def relative_gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return np.inf
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


def _fix_and_polish(problem: MipProblem, x, lp_method):
    """Round binaries, fix them, and re-solve the continuous part."""
    lp = problem.lp
    xb = np.rint(x[problem.binary])
    lo, hi = lp.lo.copy(), lp.hi.copy()
    lo[problem.binary] = xb
    hi[problem.binary] = xb
    sol = solve_lp(lp.with_bounds(lo, hi), method=lp_method)
    if sol.status != OPTIMAL:
        return None
    out = sol.x.copy()
    out[problem.binary] = xb
    return out, float(lp.c @ out)


def _solve_bnb(problem: MipProblem, gap_tol, time_limit_s, node_limit, lp_method) -> MipSolution:
    lp = problem.lp
    start = time.perf_counter()
    binaries = np.flatnonzero(problem.binary)
    counter = itertools.count()
    incumbent, inc_obj = None, np.inf
    # node: (bound, seq, lo, hi)
    stack = [(-np.inf, next(counter), lp.lo.copy(), lp.hi.copy())]
    heap: list = []
    nodes = 0
    diving = True
    pruned_bound = np.inf

    def open_bound():
        vals = [n[0] for n in stack] + [n[0] for n in heap]
        return min(vals) if vals else inc_obj

    while stack or heap:
        if node_limit is not None and nodes >= node_limit:
            break
        if time_limit_s is not None and time.perf_counter() - start > time_limit_s:
            break
        if diving and stack:
            parent_bound, _, lo, hi = stack.pop()
        else:
            if stack:
                for item in stack:
                    heapq.heappush(heap, item)
                stack = []
            parent_bound, _, lo, hi = heapq.heappop(heap)
        if parent_bound >= inc_obj - gap_tol * max(1.0, abs(inc_obj)) and np.isfinite(inc_obj):
            # pruned within the gap tolerance; its bound still limits the proof
            pruned_bound = min(pruned_bound, parent_bound)
            continue
        nodes += 1
        sol = solve_lp(lp.with_bounds(lo, hi), method=lp_method)
        if sol.status == INFEASIBLE:
            continue
        if sol.status != OPTIMAL:
            log.warning("node LP ended with status %s", sol.status)
            continue
        obj = sol.objective
        if obj >= inc_obj - 1e-12 * max(1.0, abs(inc_obj)):
            continue
        xv = sol.x[binaries]
        frac = np.abs(xv - np.rint(xv))
        if frac.max(initial=0.0) <= INT_TOL:
            polished = _fix_and_polish(problem, sol.x, lp_method)
            if polished is not None and polished[1] < inc_obj:
                incumbent, inc_obj = polished
                diving = False
            continue
        # most fractional; argmax returns the lowest index among ties
        score = np.minimum(xv - np.floor(xv), np.ceil(xv) - xv)
        pos = int(np.argmax(score))
        var = binaries[pos]
        val = sol.x[var]
        down_hi = hi.copy()
        down_hi[var] = 0.0
        up_lo = lo.copy()
        up_lo[var] = 1.0
        down = (obj, next(counter), lo, down_hi)
        up = (obj, next(counter), up_lo, hi)
        if diving:
            # the child nearest the relaxation value is explored first
            first, second = (up, down) if val >= 0.5 else (down, up)
            stack.append(second)
            stack.append(first)
        else:
            heapq.heappush(heap, down)
            heapq.heappush(heap, up)

    exhausted = not stack and not heap
    bound = min(pruned_bound, inc_obj if exhausted else min(open_bound(), inc_obj))
    if incumbent is None:
        status = INFEASIBLE if exhausted else LIMIT
        return MipSolution(status, np.full(lp.n, np.nan), np.nan, bound, np.inf, nodes, "bnb")
    gap = relative_gap(inc_obj, bound)
    status = OPTIMAL if gap <= gap_tol else FEASIBLE
    return MipSolution(status, incumbent, inc_obj, bound, gap, nodes, "bnb")


def _solve_highs(problem: MipProblem, gap_tol, time_limit_s, node_limit) -> MipSolution:
    lp = problem.lp
    options = {"mip_rel_gap": gap_tol, "presolve": True, "disp": False}
    if time_limit_s is not None:
        options["time_limit"] = float(time_limit_s)
    if node_limit is not None:
        options["node_limit"] = int(node_limit)
    lo = np.where(np.isfinite(lp.row_lo), lp.row_lo, -np.inf)
    hi = np.where(np.isfinite(lp.row_hi), lp.row_hi, np.inf)
    cons = [LinearConstraint(sp.csr_matrix(lp.A), lo, hi)] if lp.m else []
    res = milp(lp.c, integrality=problem.binary.astype(int),
               bounds=Bounds(lp.lo, lp.hi), constraints=cons, options=options)
    bound = getattr(res, "mip_dual_bound", np.nan)
    if res.x is None:
        status = INFEASIBLE if res.status == 2 else LIMIT
        return MipSolution(status, np.full(lp.n, np.nan), np.nan,
                           bound if bound is not None else np.nan, np.inf, 0, "highs")
    polished = _fix_and_polish(problem, np.asarray(res.x), "highs")
    if polished is None:
        x = np.asarray(res.x, dtype=float).copy()
        x[problem.binary] = np.rint(x[problem.binary])
        obj = float(lp.c @ x)
    else:
        x, obj = polished
    if bound is None or not np.isfinite(bound):
        bound = obj
    bound = min(bound, obj)
    gap = relative_gap(obj, bound)
    status = OPTIMAL if (res.status == 0 or gap <= gap_tol) else FEASIBLE
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    return MipSolution(status, x, obj, bound, gap, nodes, "highs")


def solve_mip(problem: MipProblem, gap_tol: float = 1e-4, time_limit_s: float | None = None,
              node_limit: int | None = None, backend: str = "auto",
              lp_method: str = "auto") -> MipSolution:
    """Minimize a mixed-binary linear program.

    ``backend='auto'`` runs the in-house branch and bound when the model has at
    most ``BNB_MAX_BINARIES`` binaries and HiGHS otherwise.  Hitting a limit with
    an incumbent yields status ``'feasible'``; without one, ``'limit'``.
    """
    if backend == "auto":
        backend = "bnb" if problem.binary.sum() <= BNB_MAX_BINARIES else "highs"
    if backend == "bnb":
        return _solve_bnb(problem, gap_tol, time_limit_s, node_limit, lp_method)
    if backend == "highs":
        return _solve_highs(problem, gap_tol, time_limit_s, node_limit)
    raise ValueError(f"unknown MIP backend {backend!r}")
