"""Single-period AC optimal power flow as a smooth NLP.

Variables, in column order: non-reference bus angles, bus voltage magnitudes,
online device real and reactive powers, cost-block fills, four non-negative
mismatch slacks per bus and, with soft line limits, one overload and two
limit slacks per line.  Constraints are the bus real/reactive balances, the
link between a device's power and its block fills and, optionally, the
apparent-power limits at both line ends.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..model import Case
from .flows import LineArrays, flow_coefficients, flow_derivatives


@dataclass
class AcOpfProblem:
    """Data of one period's AC-OPF, restricted to online devices and in-service lines."""

    t: int
    duration: float
    v_min: np.ndarray
    v_max: np.ndarray
    ref_bus: int
    line_ids: np.ndarray
    line_from: np.ndarray
    line_to: np.ndarray
    line_coef: np.ndarray      # (4 flows, 4 coefficients, L)
    s_max: np.ndarray
    device_ids: np.ndarray     # case indices of online devices
    device_bus: np.ndarray
    sign: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    block_device: np.ndarray   # position in the online list
    block_width: np.ndarray
    block_rate: np.ndarray
    balance_penalty: float = 1e6
    line_penalty: float = 1e5
    line_limits: bool = False

    def __post_init__(self):
        for lo, hi, what in ((self.p_lo, self.p_hi, "p"), (self.q_lo, self.q_hi, "q"),
                             (self.v_min, self.v_max, "v")):
            if np.any(lo > hi):
                raise ValueError(f"unordered {what} bounds")

    @property
    def n_buses(self) -> int:
        return len(self.v_min)

    @property
    def n_lines(self) -> int:
        return len(self.line_from)

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)


def build_acopf_problem(case: Case, t: int, u_on, p_lo, p_hi, q_lo=None, q_hi=None,
                        line_limits: bool = False) -> AcOpfProblem:
    """Collect the data of period ``t``.

    ``u_on`` and the bound arrays are indexed by case device; only devices with
    ``u_on = 1`` enter the problem.  Reactive bounds default to the device limits.
    """
    u_on = np.asarray(u_on)
    online = np.flatnonzero(u_on > 0)
    p_lo, p_hi = np.asarray(p_lo, float), np.asarray(p_hi, float)
    q_lo = case.q_min[:, t] if q_lo is None else np.asarray(q_lo, float)
    q_hi = case.q_max[:, t] if q_hi is None else np.asarray(q_hi, float)
    lines = np.array(case.in_service_lines, dtype=int)
    la = LineArrays.from_lines([case.lines[l] for l in lines])
    b_dev, b_w, b_r = [], [], []
    for pos, j in enumerate(online):
        for w, r in case.devices[j].cost_curve[t]:
            b_dev.append(pos)
            b_w.append(w)
            b_r.append(r)
    return AcOpfProblem(
        t=t, duration=float(case.durations[t]),
        v_min=np.array([b.v_min for b in case.buses]), v_max=np.array([b.v_max for b in case.buses]),
        ref_bus=case.reference_bus, line_ids=lines,
        line_from=case.line_from[lines], line_to=case.line_to[lines],
        line_coef=flow_coefficients(la) if len(lines) else np.zeros((4, 4, 0)),
        s_max=np.array([case.lines[l].s_max for l in lines]),
        device_ids=online, device_bus=case.device_bus[online], sign=case.sign[online],
        p_lo=p_lo[online], p_hi=p_hi[online], q_lo=q_lo[online], q_hi=q_hi[online],
        block_device=np.array(b_dev, dtype=int), block_width=np.array(b_w, dtype=float),
        block_rate=np.array(b_r, dtype=float),
        balance_penalty=case.balance_penalty, line_penalty=case.line_overload_penalty,
        line_limits=line_limits,
    )


@dataclass
class Layout:
    n: int
    m: int
    theta: np.ndarray          # column per bus, -1 for the reference bus
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    delta: np.ndarray
    sp_plus: np.ndarray
    sp_minus: np.ndarray
    sq_plus: np.ndarray
    sq_minus: np.ndarray
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    w_fr: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    w_to: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    # constraint row offsets
    row_p: int = 0
    row_q: int = 0
    row_link: int = 0
    row_lim_fr: int = 0
    row_lim_to: int = 0


def make_layout(prob: AcOpfProblem) -> Layout:
    I, J, L, B = prob.n_buses, prob.n_devices, prob.n_lines, len(prob.block_width)
    pos = 0

    def take(k):
        nonlocal pos
        out = np.arange(pos, pos + k)
        pos += k
        return out

    theta = np.full(I, -1, dtype=int)
    non_ref = np.array([i for i in range(I) if i != prob.ref_bus], dtype=int)
    theta[non_ref] = take(len(non_ref))
    lay = dict(theta=theta, v=take(I), p=take(J), q=take(J), delta=take(B),
               sp_plus=take(I), sp_minus=take(I), sq_plus=take(I), sq_minus=take(I))
    if prob.line_limits:
        lay.update(sigma=take(L), w_fr=take(L), w_to=take(L))
    m = 2 * I + J + (2 * L if prob.line_limits else 0)
    return Layout(n=pos, m=m, row_p=0, row_q=I, row_link=2 * I,
                  row_lim_fr=2 * I + J, row_lim_to=2 * I + J + L, **lay)


class AcOpfNlp:
    """Objective, constraints and their derivatives for an ``AcOpfProblem``."""

    def __init__(self, prob: AcOpfProblem):
        self.prob = prob
        self.lay = lay = make_layout(prob)
        self.n, self.m = lay.n, lay.m
        I, L = prob.n_buses, prob.n_lines
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        lo[lay.v], hi[lay.v] = prob.v_min, prob.v_max
        lo[lay.p], hi[lay.p] = prob.p_lo, prob.p_hi
        lo[lay.q], hi[lay.q] = prob.q_lo, prob.q_hi
        lo[lay.delta], hi[lay.delta] = 0.0, prob.block_width
        for s in (lay.sp_plus, lay.sp_minus, lay.sq_plus, lay.sq_minus, lay.sigma, lay.w_fr, lay.w_to):
            lo[s] = 0.0
        self.lo, self.hi = lo, hi

        d = prob.duration
        c = np.zeros(self.n)
        c[lay.delta] = d * prob.sign[prob.block_device] * prob.block_rate
        for s in (lay.sp_plus, lay.sp_minus, lay.sq_plus, lay.sq_minus):
            c[s] = d * prob.balance_penalty
        c[lay.sigma] = d * prob.line_penalty
        self.c = c

        # terminal columns per line, -1 where the angle is the fixed reference
        fr, to = prob.line_from, prob.line_to
        self.cols4 = np.stack([lay.theta[fr], lay.theta[to], lay.v[fr], lay.v[to]], axis=1) if L else np.zeros((0, 4), int)
        # balance row receiving each flow: p_fr, q_fr, p_to, q_to
        self.flow_rows = np.stack([lay.row_p + fr, lay.row_q + fr, lay.row_p + to, lay.row_q + to]) if L else np.zeros((4, 0), int)
        self._linear_jac = self._build_linear_jacobian()

    # -- helpers -----------------------------------------------------------
    def split(self, x):
        lay = self.lay
        theta = np.zeros(self.prob.n_buses)
        mask = lay.theta >= 0
        theta[mask] = x[lay.theta[mask]]
        return theta, x[lay.v]

    def _terminal(self, x):
        prob = self.prob
        theta, v = self.split(x)
        fr, to = prob.line_from, prob.line_to
        return v[fr], v[to], theta[fr] - theta[to]

    def flows(self, x):
        """Flow values (4, L), gradients (4, L, 4) and Hessians (4, L, 4, 4)."""
        vf, vt, dth = self._terminal(x)
        return flow_derivatives(self.prob.line_coef, vf, vt, dth)

    def _build_linear_jacobian(self) -> sp.csr_matrix:
        prob, lay = self.prob, self.lay
        I, J = prob.n_buses, prob.n_devices
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.asarray(r))
            cols.append(np.asarray(c))
            vals.append(np.broadcast_to(np.asarray(v, float), np.shape(r)))

        add(lay.row_p + prob.device_bus, lay.p, prob.sign)
        add(lay.row_q + prob.device_bus, lay.q, prob.sign)
        bus = np.arange(I)
        add(lay.row_p + bus, lay.sp_plus, -1.0)
        add(lay.row_p + bus, lay.sp_minus, 1.0)
        add(lay.row_q + bus, lay.sq_plus, -1.0)
        add(lay.row_q + bus, lay.sq_minus, 1.0)
        add(lay.row_link + np.arange(J), lay.p, 1.0)
        add(lay.row_link + prob.block_device, lay.delta, -1.0)
        if prob.line_limits and prob.n_lines:
            add(lay.row_lim_fr + np.arange(prob.n_lines), lay.w_fr, 1.0)
            add(lay.row_lim_to + np.arange(prob.n_lines), lay.w_to, 1.0)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.m, self.n))

    # -- NLP interface -------------------------------------------------------
    def objective(self, x) -> float:
        return float(self.c @ x)

    def gradient(self, x) -> np.ndarray:
        return self.c.copy()

    def constraints(self, x) -> np.ndarray:
        prob = self.prob
        out = self._linear_jac @ x
        if prob.n_lines:
            val, _, _ = self.flows(x)
            np.subtract.at(out, self.flow_rows.ravel(), val.ravel())
            if prob.line_limits:
                s = prob.s_max + x[self.lay.sigma]
                L = prob.n_lines
                out[self.lay.row_lim_fr + np.arange(L)] += val[0] ** 2 + val[1] ** 2 - s ** 2
                out[self.lay.row_lim_to + np.arange(L)] += val[2] ** 2 + val[3] ** 2 - s ** 2
        return out

    def _flow_jac_entries(self, x):
        """Nonlinear Jacobian entries as (rows, cols, vals) before dropping fixed angles."""
        prob, lay = self.prob, self.lay
        L = prob.n_lines
        val, grad, _ = self.flows(x)
        rows = [np.repeat(self.flow_rows[k], 4) for k in range(4)]
        cols = [self.cols4.ravel()] * 4
        vals = [-grad[k].ravel() for k in range(4)]
        if prob.line_limits:
            ar = np.arange(L)
            s = prob.s_max + x[lay.sigma]
            for row0, kp, kq in ((lay.row_lim_fr, 0, 1), (lay.row_lim_to, 2, 3)):
                g = 2 * val[kp][:, None] * grad[kp] + 2 * val[kq][:, None] * grad[kq]
                rows += [np.repeat(row0 + ar, 4), row0 + ar]
                cols += [self.cols4.ravel(), lay.sigma]
                vals += [g.ravel(), -2 * s]
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        keep = c >= 0
        return r[keep], c[keep], v[keep]

    def jacobian(self, x) -> sp.csr_matrix:
        if not self.prob.n_lines:
            return self._linear_jac.copy()
        r, c, v = self._flow_jac_entries(x)
        nl = sp.csr_matrix((v, (r, c)), shape=(self.m, self.n))
        return (self._linear_jac + nl).tocsr()

    def hessian(self, x, lam, obj_factor: float = 1.0) -> sp.csr_matrix:
        """Hessian of ``obj_factor * f + lam @ c``; the objective is linear, so only constraints contribute."""
        prob, lay = self.prob, self.lay
        L = prob.n_lines
        if not L:
            return sp.csr_matrix((self.n, self.n))
        val, grad, hess = self.flows(x)
        # each flow enters its balance row with a minus sign
        weight = -lam[self.flow_rows]                       # (4, L)
        H = np.einsum("kl,klab->lab", weight, hess)         # (L, 4, 4)
        extra_r, extra_c, extra_v = [], [], []
        if prob.line_limits:
            ar = np.arange(L)
            for row0, kp, kq in ((lay.row_lim_fr, 0, 1), (lay.row_lim_to, 2, 3)):
                mu = lam[row0 + ar]
                H += 2 * mu[:, None, None] * (
                    np.einsum("la,lb->lab", grad[kp], grad[kp]) + val[kp][:, None, None] * hess[kp]
                    + np.einsum("la,lb->lab", grad[kq], grad[kq]) + val[kq][:, None, None] * hess[kq])
                extra_r.append(lay.sigma)
                extra_c.append(lay.sigma)
                extra_v.append(-2 * mu)
        r = np.repeat(self.cols4, 4, axis=1).ravel()
        c = np.tile(self.cols4, (1, 4)).ravel()
        v = H.ravel()
        if extra_r:
            r = np.concatenate([r] + extra_r)
            c = np.concatenate([c] + extra_c)
            v = np.concatenate([v] + extra_v)
        keep = (r >= 0) & (c >= 0)
        return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(self.n, self.n))

    def hess_vec(self, x, lam, vec, obj_factor: float = 1.0) -> np.ndarray:
        return self.hessian(x, lam, obj_factor) @ vec

    # -- points ------------------------------------------------------------
    def flat_start(self) -> np.ndarray:
        """v = 1 (clipped to bounds), angles zero, powers at bound midpoints.

        Block fills share the device power in proportion to block widths and the
        mismatch slacks absorb the balance residual, so the point satisfies every
        equality except the optional line limits.
        """
        prob, lay = self.prob, self.lay
        x = np.zeros(self.n)
        x[lay.v] = np.clip(1.0, prob.v_min, prob.v_max)
        x[lay.p] = 0.5 * (prob.p_lo + prob.p_hi)
        x[lay.q] = 0.5 * (prob.q_lo + prob.q_hi)
        self.fill_dependent(x)
        return x

    def fill_dependent(self, x, floor: float = 0.0) -> None:
        """Set block fills and slacks consistent with the angles, voltages and powers in ``x``."""
        prob, lay = self.prob, self.lay
        J = prob.n_devices
        total = np.bincount(prob.block_device, weights=prob.block_width, minlength=J)
        share = np.divide(x[lay.p], total, out=np.zeros(J), where=total > 0)
        x[lay.delta] = prob.block_width * share[prob.block_device]
        I = prob.n_buses
        for s in (lay.sp_plus, lay.sp_minus, lay.sq_plus, lay.sq_minus):
            x[s] = 0.0
        res = self.constraints(x)
        rp, rq = res[lay.row_p:lay.row_p + I], res[lay.row_q:lay.row_q + I]
        x[lay.sp_plus] = np.maximum(rp, 0) + floor
        x[lay.sp_minus] = np.maximum(-rp, 0) + floor
        x[lay.sq_plus] = np.maximum(rq, 0) + floor
        x[lay.sq_minus] = np.maximum(-rq, 0) + floor
        if prob.line_limits and prob.n_lines:
            val, _, _ = self.flows(x)
            s_fr = np.sqrt(val[0] ** 2 + val[1] ** 2)
            s_to = np.sqrt(val[2] ** 2 + val[3] ** 2)
            sigma = np.maximum(np.maximum(s_fr, s_to) - prob.s_max, 0.0) + floor
            x[lay.sigma] = sigma
            s = prob.s_max + sigma
            x[lay.w_fr] = s ** 2 - s_fr ** 2
            x[lay.w_to] = s ** 2 - s_to ** 2


def acopf_derivatives(prob: AcOpfProblem, x):
    """Objective gradient, sparse constraint Jacobian and a Hessian-vector product.

    Returns
    -------
    grad : ndarray
    jac : scipy.sparse.csr_matrix
    hess_vec : callable
        ``hess_vec(lam, vec)`` gives the product of the Lagrangian Hessian
        (constraint part, multipliers ``lam``) with ``vec``.
    """
    nlp = AcOpfNlp(prob)
    x = np.asarray(x, float)
    return nlp.gradient(x), nlp.jacobian(x), lambda lam, vec: nlp.hess_vec(x, lam, vec)
