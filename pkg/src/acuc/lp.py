"""Linear programs with ranged rows and a bounded-variable revised simplex.

Problems are stated as::

    minimize    c @ x
    subject to  row_lo <= A @ x <= row_hi
                lo <= x <= hi

Small problems are solved by the in-house primal simplex (Dantzig pricing,
lowest-index ties, Bland's rule after a long run of degenerate pivots).
Large ones are routed to HiGHS through :func:`scipy.optimize.linprog` when
``method='auto'``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

# problems up to this many rows (and columns below) use the dense simplex
SIMPLEX_MAX_ROWS = 250
SIMPLEX_MAX_COLS = 3000


@dataclass
class LinearProgram:
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    names: list[str] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.row_lo = np.asarray(self.row_lo, dtype=float)
        self.row_hi = np.asarray(self.row_hi, dtype=float)
        self.A = sp.csr_matrix(self.A, shape=(len(self.row_lo), len(self.c)))

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.row_lo)

    def check(self) -> None:
        if np.any(self.row_lo > self.row_hi):
            raise ValueError("row_lo > row_hi")
        if np.any(self.lo > self.hi):
            raise ValueError("lo > hi")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")

    def with_bounds(self, lo, hi) -> "LinearProgram":
        return LinearProgram(self.c, lo, hi, self.A, self.row_lo, self.row_hi,
                             self.names, self.row_names)

    def objective(self, x) -> float:
        return float(self.c @ x)

    def primal_residual(self, x) -> float:
        ax = self.A @ x
        viol = np.concatenate([
            np.maximum(self.row_lo - ax, 0), np.maximum(ax - self.row_hi, 0),
            np.maximum(self.lo - x, 0), np.maximum(x - self.hi, 0)])
        return float(viol.max()) if viol.size else 0.0


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    dual_objective: float = np.nan
    iterations: int = 0
    method: str = ""


class LpBuilder:
    """Incremental construction of a :class:`LinearProgram`."""

    def __init__(self):
        self._lo: list[np.ndarray] = []
        self._hi: list[np.ndarray] = []
        self._c: list[np.ndarray] = []
        self.blocks: list[tuple[str, np.ndarray]] = []
        self.n = 0
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self.row_lo: list[float] = []
        self.row_hi: list[float] = []
        self.row_names: list[str] = []

    def add_vars(self, shape, lo=0.0, hi=np.inf, cost=0.0, name="x") -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self._lo.append(np.broadcast_to(np.asarray(lo, float), shape).ravel().copy())
        self._hi.append(np.broadcast_to(np.asarray(hi, float), shape).ravel().copy())
        self._c.append(np.broadcast_to(np.asarray(cost, float), shape).ravel().copy())
        self.blocks.append((name, idx))
        self.n += size
        return idx

    def add_row(self, cols, vals, lo=-np.inf, hi=np.inf, name="") -> int:
        r = len(self.row_lo)
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        keep = vals != 0
        self._rows.extend([r] * int(keep.sum()))
        self._cols.extend(cols[keep].tolist())
        self._vals.extend(vals[keep].tolist())
        self.row_lo.append(float(lo))
        self.row_hi.append(float(hi))
        self.row_names.append(name)
        return r

    def add_rows(self, cols, vals, lo=-np.inf, hi=np.inf, name="") -> np.ndarray:
        """Append ``R`` rows at once; ``cols`` and ``vals`` are shaped (R, k)."""
        cols = np.atleast_2d(np.asarray(cols, dtype=int))
        R = cols.shape[0]
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        first = len(self.row_lo)
        rows = np.broadcast_to(np.arange(first, first + R)[:, None], cols.shape)
        keep = vals != 0
        self._rows.extend(rows[keep].tolist())
        self._cols.extend(cols[keep].tolist())
        self._vals.extend(vals[keep].tolist())
        self.row_lo.extend(np.broadcast_to(np.asarray(lo, float), (R,)).tolist())
        self.row_hi.extend(np.broadcast_to(np.asarray(hi, float), (R,)).tolist())
        self.row_names.extend([name] * R)
        return np.arange(first, first + R)

    def build(self) -> LinearProgram:
        lo = np.concatenate(self._lo) if self._lo else np.zeros(0)
        hi = np.concatenate(self._hi) if self._hi else np.zeros(0)
        c = np.concatenate(self._c) if self._c else np.zeros(0)
        m = len(self.row_lo)
        A = sp.csr_matrix((self._vals, (self._rows, self._cols)), shape=(m, self.n))
        A.sum_duplicates()
        names = [""] * self.n
        for name, idx in self.blocks:
            for i in idx.ravel():
                names[i] = name
        return LinearProgram(c, lo, hi, A, np.array(self.row_lo), np.array(self.row_hi),
                             names, list(self.row_names))


# ---------------------------------------------------------------------------
# dense bounded-variable revised simplex

_AT_LO, _AT_HI, _FREE, _BASIC = 0, 1, 2, 3


class _Simplex:
    def __init__(self, M, cost, lb, ub, feas_tol, opt_tol, iter_limit):
        self.M = M
        self.lb = lb
        self.ub = ub
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.iter_limit = iter_limit
        self.iterations = 0
        self.bland = False
        self.degenerate_run = 0
        self.cost = cost

    def run(self, x, status, basis):
        """Primal simplex from a feasible basis.  Returns a status string."""
        M, lb, ub = self.M, self.lb, self.ub
        m = M.shape[0]
        # absolute: scaling by the largest cost lets big penalty coefficients
        # mask improving columns with small reduced costs
        dtol = self.opt_tol
        piv_tol = 1e-9
        while True:
            if self.iterations >= self.iter_limit:
                return ITERATION_LIMIT
            B = M[:, basis]
            lu = scipy.linalg.lu_factor(B, check_finite=False)
            nonbasic = status != _BASIC
            x[basis] = scipy.linalg.lu_solve(lu, -(M[:, nonbasic] @ x[nonbasic]), check_finite=False)
            y = scipy.linalg.lu_solve(lu, self.cost[basis], trans=1, check_finite=False)
            d = self.cost - M.T @ y
            can_up = ((status == _AT_LO) | (status == _FREE)) & (ub > lb) & (d < -dtol)
            can_dn = ((status == _AT_HI) | (status == _FREE)) & (ub > lb) & (d > dtol)
            eligible = can_up | can_dn
            if not eligible.any():
                self.y, self.d = y, d
                return OPTIMAL
            if self.bland:
                q = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                q = int(np.argmax(score))
            direction = 1.0 if can_up[q] else -1.0
            w = scipy.linalg.lu_solve(lu, M[:, q], check_finite=False)
            # basic values move by -direction * theta * w
            dw = direction * w
            xb = x[basis]
            lbb, ubb = lb[basis], ub[basis]
            ratios = np.full(m, np.inf)
            dec = dw > piv_tol
            inc = dw < -piv_tol
            ok = dec & np.isfinite(lbb)
            ratios[ok] = np.maximum(xb[ok] - lbb[ok], 0.0) / dw[ok]
            ok = inc & np.isfinite(ubb)
            ratios[ok] = np.maximum(ubb[ok] - xb[ok], 0.0) / (-dw[ok])
            flip = ub[q] - lb[q]
            theta_b = ratios.min() if m else np.inf
            if not np.isfinite(theta_b) and not np.isfinite(flip):
                return UNBOUNDED
            self.iterations += 1
            if flip <= theta_b:
                theta = flip
                x[q] += direction * theta
                x[basis] = xb - theta * dw
                status[q] = _AT_HI if direction > 0 else _AT_LO
            else:
                theta = theta_b
                ties = np.flatnonzero(ratios <= theta_b + 1e-12)
                if self.bland:
                    r = int(ties[np.argmin(np.asarray(basis)[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(w[ties]))])
                leaving = basis[r]
                x[q] += direction * theta
                x[basis] = xb - theta * dw
                if dw[r] > 0:
                    x[leaving] = lb[leaving]
                    status[leaving] = _AT_LO
                else:
                    x[leaving] = ub[leaving]
                    status[leaving] = _AT_HI
                basis[r] = q
                status[q] = _BASIC
            if theta <= 1e-12:
                self.degenerate_run += 1
                if self.degenerate_run >= 1000 and not self.bland:
                    log.debug("simplex switching to Bland's rule")
                    self.bland = True
            else:
                self.degenerate_run = 0


def _nonbasic_start(lo, hi):
    x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    status = np.where(np.isfinite(lo), _AT_LO, np.where(np.isfinite(hi), _AT_HI, _FREE))
    return x, status


def _solve_simplex(lp: LinearProgram, feas_tol, opt_tol, iter_limit) -> LpSolution:
    n = lp.n
    A = lp.A.toarray()
    row_nnz = np.abs(A).sum(axis=1) > 0
    # drop empty rows after checking them
    empty = ~row_nnz
    if np.any(empty & ((lp.row_lo > feas_tol) | (lp.row_hi < -feas_tol))):
        return _failed(lp, INFEASIBLE, "simplex")
    keep = np.flatnonzero(row_nnz)
    A = A[keep]
    rlo, rhi = lp.row_lo[keep], lp.row_hi[keep]
    m = len(keep)

    xs, st_s = _nonbasic_start(lp.lo, lp.hi)
    act = A @ xs
    below = act < rlo - feas_tol
    above = act > rhi + feas_tol
    art_rows = np.flatnonzero(below | above)
    na = len(art_rows)
    D = np.zeros((m, na))
    art_val = np.zeros(na)
    for a, i in enumerate(art_rows):
        # A x - s + D a = 0 with s pinned at the violated bound
        if below[i]:
            D[i, a] = 1.0
            art_val[a] = rlo[i] - act[i]
        else:
            D[i, a] = -1.0
            art_val[a] = act[i] - rhi[i]
    M = np.hstack([A, -np.eye(m), D])
    lb = np.concatenate([lp.lo, rlo, np.zeros(na)])
    ub = np.concatenate([lp.hi, rhi, np.full(na, np.inf)])
    x = np.concatenate([xs, act, art_val])
    status = np.concatenate([st_s, np.full(m, _BASIC), np.full(na, _BASIC)])
    basis = list(range(n, n + m))
    for a, i in enumerate(art_rows):
        x[n + i] = rlo[i] if below[i] else rhi[i]
        status[n + i] = _AT_LO if below[i] else _AT_HI
        basis[i] = n + m + a

    total_iter = 0
    if na:
        c1 = np.concatenate([np.zeros(n + m), np.ones(na)])
        s1 = _Simplex(M, c1, lb, ub, feas_tol, opt_tol, iter_limit)
        res = s1.run(x, status, basis)
        total_iter += s1.iterations
        if res == ITERATION_LIMIT:
            return _failed(lp, ITERATION_LIMIT, "simplex", total_iter)
        if x[n + m:].sum() > feas_tol * max(1.0, na):
            return _failed(lp, INFEASIBLE, "simplex", total_iter)
        ub[n + m:] = 0.0
        x[n + m:] = np.clip(x[n + m:], 0.0, 0.0)
    c2 = np.concatenate([lp.c, np.zeros(m + na)])
    s2 = _Simplex(M, c2, lb, ub, feas_tol, opt_tol, max(iter_limit - total_iter, 0))
    res = s2.run(x, status, basis)
    total_iter += s2.iterations
    if res != OPTIMAL:
        return _failed(lp, res, "simplex", total_iter)
    xsol = x[:n].copy()
    y = np.zeros(lp.m)
    y[keep] = s2.y
    return _finish(lp, xsol, y, total_iter, "simplex")


def _failed(lp, status, method, iterations=0) -> LpSolution:
    nan = np.full(lp.n, np.nan)
    return LpSolution(status, nan, np.full(lp.m, np.nan), nan.copy(), np.nan,
                      np.nan, iterations, method)


def _finish(lp: LinearProgram, x, y, iterations, method) -> LpSolution:
    d = lp.c - lp.A.T @ y
    dual = _dual_objective(lp, y, d)
    return LpSolution(OPTIMAL, x, y, d, float(lp.c @ x), dual, iterations, method)


def _dual_objective(lp, y, d) -> float:
    """Lagrangian dual value at multipliers ``y`` (a valid lower bound)."""
    def part(mult, lo, hi):
        tot = 0.0
        pos, neg = mult > 0, mult < 0
        with np.errstate(invalid="ignore"):
            tot += float(np.sum(mult[pos] * lo[pos]))
            tot += float(np.sum(mult[neg] * hi[neg]))
        return tot
    # reduced costs within tolerance of zero multiply infinite bounds otherwise
    dust = 1e-9 * max(1.0, np.abs(lp.c).max(initial=0.0))
    d = np.where(np.abs(d) < dust, 0.0, d)
    y = np.where(np.abs(y) < dust, 0.0, y)
    return part(d, lp.lo, lp.hi) + part(y, lp.row_lo, lp.row_hi)


# ---------------------------------------------------------------------------
# HiGHS route


def _solve_highs(lp: LinearProgram, feas_tol, opt_tol, iter_limit) -> LpSolution:
    A = lp.A.tocsr()
    eq = np.isclose(lp.row_lo, lp.row_hi, rtol=0, atol=0)
    up = ~eq & np.isfinite(lp.row_hi)
    dn = ~eq & np.isfinite(lp.row_lo)
    A_ub = sp.vstack([A[up], -A[dn]]).tocsr()
    b_ub = np.concatenate([lp.row_hi[up], -lp.row_lo[dn]])
    bounds = np.column_stack([np.where(np.isfinite(lp.lo), lp.lo, -np.inf),
                              np.where(np.isfinite(lp.hi), lp.hi, np.inf)])
    options = {"primal_feasibility_tolerance": feas_tol,
               "dual_feasibility_tolerance": opt_tol,
               "presolve": True}
    if iter_limit is not None:
        options["maxiter"] = int(iter_limit)
    res = linprog(lp.c, A_ub=A_ub if A_ub.shape[0] else None, b_ub=b_ub if A_ub.shape[0] else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=lp.row_lo[eq] if eq.any() else None,
                  bounds=bounds, method="highs", options=options)
    if res.status == 2:
        return _failed(lp, INFEASIBLE, "highs", getattr(res, "nit", 0))
    if res.status == 3:
        return _failed(lp, UNBOUNDED, "highs", getattr(res, "nit", 0))
    if res.status != 0:
        return _failed(lp, ITERATION_LIMIT, "highs", getattr(res, "nit", 0))
    y = np.zeros(lp.m)
    if eq.any():
        y[eq] = res.eqlin.marginals
    if A_ub.shape[0]:
        mu = res.ineqlin.marginals
        nup = int(up.sum())
        y[up] += mu[:nup]
        y[dn] -= mu[nup:]
    return _finish(lp, np.asarray(res.x, dtype=float), y, int(getattr(res, "nit", 0)), "highs")


def solve_lp(lp: LinearProgram, feas_tol: float = 1e-7, opt_tol: float = 1e-7,
             iter_limit: int = 100000, method: str = "auto") -> LpSolution:
    """Solve ``lp`` to optimality.

    Parameters
    ----------
    method : {'auto', 'simplex', 'highs'}
        'auto' uses the in-house simplex for problems up to
        ``SIMPLEX_MAX_ROWS`` rows and ``SIMPLEX_MAX_COLS`` columns.

    Never raises on solver failure; the status field says what happened.
    """
    lp.check()
    if method == "auto":
        small = lp.m <= SIMPLEX_MAX_ROWS and lp.n <= SIMPLEX_MAX_COLS
        method = "simplex" if small else "highs"
    if method == "simplex":
        return _solve_simplex(lp, feas_tol, opt_tol, iter_limit)
    if method == "highs":
        return _solve_highs(lp, feas_tol, opt_tol, iter_limit)
    raise ValueError(f"unknown LP method {method!r}")
