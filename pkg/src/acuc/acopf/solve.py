"""Solve one period's AC-OPF and package the result."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import pwl_value
from .flows import flow_derivatives
from .ipm import CONVERGED, IpmOptions, solve_nlp
from .problem import AcOpfNlp, AcOpfProblem


@dataclass
class AcOpfResult:
    """Solution of a single-period AC-OPF.

    Device arrays follow ``problem.device_ids`` and line arrays follow
    ``problem.line_ids``.  Mismatches are the exact bus residuals of the
    returned point, not the solver's slack values.
    """

    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_fr: np.ndarray
    q_fr: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    p_mismatch: np.ndarray
    q_mismatch: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    status: str
    restored: bool = False

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def evaluate_point(prob: AcOpfProblem, nlp: AcOpfNlp, x):
    """Flows, exact residuals and penalized objective at ``x``."""
    lay = nlp.lay
    theta, v = nlp.split(x)
    p, q = x[lay.p].copy(), x[lay.q].copy()
    fr, to = prob.line_from, prob.line_to
    if prob.n_lines:
        val, _, _ = flow_derivatives(prob.line_coef, v[fr], v[to], theta[fr] - theta[to])
    else:
        val = np.zeros((4, 0))
    I = prob.n_buses
    dp, dq = np.zeros(I), np.zeros(I)
    np.add.at(dp, prob.device_bus, prob.sign * p)
    np.add.at(dq, prob.device_bus, prob.sign * q)
    np.subtract.at(dp, fr, val[0])
    np.subtract.at(dp, to, val[2])
    np.subtract.at(dq, fr, val[1])
    np.subtract.at(dq, to, val[3])
    d = prob.duration
    cost = 0.0
    for pos in range(prob.n_devices):
        sel = prob.block_device == pos
        blocks = list(zip(prob.block_width[sel], prob.block_rate[sel]))
        cost += d * prob.sign[pos] * pwl_value(blocks, p[pos])
    penalty = d * prob.balance_penalty * (np.abs(dp).sum() + np.abs(dq).sum())
    if prob.line_limits and prob.n_lines:
        s = np.maximum(np.hypot(val[0], val[1]), np.hypot(val[2], val[3]))
        penalty += d * prob.line_penalty * np.maximum(s - prob.s_max, 0.0).sum()
    return theta, v, p, q, val, dp, dq, cost + penalty


def solve_acopf(problem: AcOpfProblem, primal_tol: float = 1e-3, dual_tol: float = 1.0,
                max_iter: int = 300, comp_tol: float = 1e-3, x0=None) -> AcOpfResult:
    """Minimize cost plus penalized mismatch for one period from a flat start.

    Non-convergence is reported through ``status`` and the residual fields.  If
    the solver's best point is worse than the flat start (or not finite) the
    flat start is returned instead and ``restored`` is set.
    """
    nlp = AcOpfNlp(problem)
    flat = nlp.flat_start()
    opts = IpmOptions(primal_tol=primal_tol, dual_tol=dual_tol, comp_tol=comp_tol, max_iter=max_iter)
    res = solve_nlp(nlp, flat if x0 is None else x0, opts)
    x = res.x
    restored = False
    if not np.all(np.isfinite(x)):
        x, restored = flat, True
    out = evaluate_point(problem, nlp, x)
    if not restored and res.status != CONVERGED:
        flat_eval = evaluate_point(problem, nlp, flat)
        if flat_eval[-1] < out[-1]:
            x, out, restored = flat, flat_eval, True
    theta, v, p, q, val, dp, dq, obj = out
    primal = res.primal_residual if not restored else float(np.abs(nlp.constraints(x)).max(initial=0.0))
    return AcOpfResult(v=v, theta=theta, p=p, q=q, p_fr=val[0], q_fr=val[1], p_to=val[2], q_to=val[3],
                       p_mismatch=dp, q_mismatch=dq, objective=float(obj), iterations=res.iterations,
                       primal_residual=float(primal), dual_residual=float(res.dual_residual),
                       status=res.status if not restored else "restored", restored=restored)
