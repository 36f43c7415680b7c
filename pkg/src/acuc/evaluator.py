"""Independent scoring and hard-constraint checking of a full solution.

Nothing stored in the solution beyond primal quantities is trusted: flows are
rebuilt from voltages, mismatches from flows and injections, and shortfalls
from the reserve quantities.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .acopf.flows import balance_residual, line_flows
from .case_io import DimensionError
from .model import ACTIVE, DOWN, REACTIVE, UP, Case, FullSolution, cascade_shortfall, pwl_value

HARD_TOL = 1e-8


@dataclass
class EvaluationReport:
    """Objective breakdown in dollars; costs and penalties are positive numbers."""

    objective: float
    energy_value: float
    energy_cost: float
    commitment_cost: float
    reserve_cost: float
    shortfall_penalty: float
    p_penalty: float
    q_penalty: float
    line_overload_penalty: float
    violations: list[str] = field(default_factory=list)
    gap_percent: float | None = None
    max_p_mismatch: float = 0.0
    max_q_mismatch: float = 0.0

    @property
    def feasible(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        row = {k: v for k, v in self.to_dict().items() if k != "violations"}
        row["n_violations"] = len(self.violations)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()

    def summary(self) -> str:
        gap = "n/a" if self.gap_percent is None else f"{self.gap_percent:.2f}%"
        return (f"objective {self.objective:.6f}  gap {gap}\n"
                f"res. penalty {-self.shortfall_penalty:.6f}  p-penalty {-self.p_penalty:.6f}  "
                f"q-penalty {-self.q_penalty:.6f}  line overload (not scored) {-self.line_overload_penalty:.6f}\n"
                f"hard violations {len(self.violations)}")


def gap_percent(reference: float, objective: float) -> float:
    """Percent shortfall of ``objective`` from a best-known ``reference``."""
    if reference == 0:
        raise ValueError("reference objective must be nonzero")
    return (reference - objective) / abs(reference) * 100.0


def _check_dims(case: Case, sol: FullSolution) -> None:
    J, I, T = case.n_devices, case.n_buses, case.T
    K = len(case.products)
    expected = {
        "u_on": (sol.commitment.u_on, (J, T)), "u_su": (sol.commitment.u_su, (J, T)),
        "u_sd": (sol.commitment.u_sd, (J, T)), "p": (sol.dispatch.p, (J, T)),
        "q": (sol.dispatch.q, (J, T)), "v": (sol.dispatch.v, (I, T)),
        "theta": (sol.dispatch.theta, (I, T)), "r": (sol.reserves.r, (J, K, T)),
    }
    for name, (arr, shape) in expected.items():
        if np.shape(arr) != shape:
            raise DimensionError(f"{name} has shape {np.shape(arr)}, expected {shape}")


def check_hard(case: Case, solution: FullSolution, tol: float = HARD_TOL) -> list[str]:
    """Hard-constraint violations, one message each; empty when all hold within ``tol``."""
    _check_dims(case, solution)
    out: list[str] = []
    c, dsp, res = solution.commitment, solution.dispatch, solution.reserves
    d = case.durations
    for name in ("u_on", "u_su", "u_sd"):
        arr = np.asarray(getattr(c, name), dtype=float)
        for j, t in zip(*np.nonzero((arr != 0) & (arr != 1))):
            out.append(f"integrality {name} {case.devices[j].id} t={t}")
    for j, dev in enumerate(case.devices):
        u_prev = int(dev.initial_on)
        p_prev = dev.initial_p
        for t in range(case.T):
            u, su, sd = int(c.u_on[j, t]), int(c.u_su[j, t]), int(c.u_sd[j, t])
            if u - u_prev != su - sd or su + sd > 1:
                out.append(f"transition {dev.id} t={t}")
            p, q = dsp.p[j, t], dsp.q[j, t]
            if p < dev.p_min[t] * u - tol or p > dev.p_max[t] * u + tol:
                out.append(f"semicontinuity p {dev.id} t={t}")
            if q < dev.q_min[t] * u - tol or q > dev.q_max[t] * u + tol:
                out.append(f"semicontinuity q {dev.id} t={t}")
            up = dev.p_ru * (u - su) + dev.p_ru_su * (su + 1 - u)
            down = dev.p_rd * u + dev.p_rd_sd * (1 - u)
            if p - p_prev > d[t] * up + tol:
                out.append(f"ramp up {dev.id} t={t}")
            if p_prev - p > d[t] * down + tol:
                out.append(f"ramp down {dev.id} t={t}")
            out.extend(_headroom_violations(case, j, t, u, p, q, res.r[:, :, t], tol))
            u_prev, p_prev = u, p
    if np.any(res.r < -tol):
        out.append("negative reserve")
    if res.shortfall.size and np.any(res.shortfall < -tol):
        out.append("negative shortfall")
    for i, bus in enumerate(case.buses):
        v = dsp.v[i]
        for t in np.flatnonzero((v < bus.v_min - tol) | (v > bus.v_max + tol)):
            out.append(f"voltage {bus.id} t={t}")
    return out


def _headroom_violations(case: Case, j: int, t: int, u: int, p: float, q: float, r_t, tol) -> list[str]:
    dev = case.devices[j]
    out = []
    for k, prod in enumerate(case.products):
        if r_t[j, k] > tol and not u:
            out.append(f"reserve while offline {dev.id} {prod.id} t={t}")
        cap = dev.reserve_cap.get(prod.id, np.inf)
        if r_t[j, k] > cap + tol:
            out.append(f"reserve cap {dev.id} {prod.id} t={t}")
    for kind, x, lo, hi in ((ACTIVE, p, dev.p_min[t], dev.p_max[t]), (REACTIVE, q, dev.q_min[t], dev.q_max[t])):
        raise_room, lower_room = hi * u - x, x - lo * u
        for direction in (UP, DOWN):
            ks = [k for k, prod in enumerate(case.products)
                  if prod.power_kind == kind and prod.direction == direction]
            if not ks:
                continue
            held = float(r_t[j, ks].sum())
            if dev.is_producer:
                room = raise_room if direction == UP else lower_room
            else:
                room = lower_room if direction == UP else raise_room
            if held > room + tol:
                out.append(f"headroom {kind} {direction} {dev.id} t={t}")
    return out


def _mismatches(case: Case, sol: FullSolution, copper_plate: bool):
    dsp = sol.dispatch
    if copper_plate:
        sign = case.sign[:, None]
        return (sign * dsp.p).sum(axis=0)[None, :], (sign * dsp.q).sum(axis=0)[None, :], np.zeros((0, case.T))
    p_fr, q_fr, p_to, q_to = line_flows(case, dsp.v, dsp.theta)
    dp, dq = balance_residual(case, dsp.p, dsp.q, p_fr, q_fr, p_to, q_to)
    s = np.maximum(np.hypot(p_fr, q_fr), np.hypot(p_to, q_to))
    s_max = np.array([line.s_max for line in case.lines])[:, None]
    over = np.maximum(s - s_max, 0.0) * case.line_status[:, None]
    return dp, dq, over


def evaluate(case: Case, solution: FullSolution, reference_objective: float | None = None,
             copper_plate: bool = False) -> EvaluationReport:
    """Score ``solution`` on ``case``.

    With ``copper_plate`` the network is ignored and mismatches are the
    system-wide real and reactive imbalances per period.
    """
    _check_dims(case, solution)
    c, dsp = solution.commitment, solution.dispatch
    d = case.durations
    value = cost = commit = 0.0
    for j, dev in enumerate(case.devices):
        for t in range(case.T):
            if c.u_on[j, t]:
                energy = d[t] * pwl_value(dev.cost_curve[t], dsp.p[j, t])
                if dev.is_producer:
                    cost += energy
                else:
                    value += energy
                commit += d[t] * dev.on_cost
            commit += c.u_su[j, t] * dev.su_cost + c.u_sd[j, t] * dev.sd_cost
    r = solution.reserves.r
    reserve_cost = 0.0
    for j, dev in enumerate(case.devices):
        for k, prod in enumerate(case.products):
            rate = dev.reserve_cost.get(prod.id, 0.0)
            if rate:
                reserve_cost += rate * float(r[j, k] @ d)
    short = cascade_shortfall(case, r)
    shortfall_pen = 0.0
    for n, zone in enumerate(case.zones):
        for k, prod in enumerate(case.products):
            shortfall_pen += zone.shortfall_penalty.get(prod.id, 0.0) * float(short[n, k] @ d)
    dp, dq, over = _mismatches(case, solution, copper_plate)
    p_pen = case.balance_penalty * float(np.abs(dp).sum(axis=0) @ d)
    q_pen = case.balance_penalty * float(np.abs(dq).sum(axis=0) @ d)
    line_pen = case.line_overload_penalty * float(over.sum(axis=0) @ d) if over.size else 0.0
    objective = value - cost - commit - reserve_cost - shortfall_pen - p_pen - q_pen
    report = EvaluationReport(
        objective=objective, energy_value=value, energy_cost=cost, commitment_cost=commit,
        reserve_cost=reserve_cost, shortfall_penalty=shortfall_pen, p_penalty=p_pen, q_penalty=q_pen,
        line_overload_penalty=line_pen, violations=check_hard(case, solution),
        max_p_mismatch=float(np.abs(dp).max(initial=0.0)), max_q_mismatch=float(np.abs(dq).max(initial=0.0)))
    if reference_objective is not None:
        report.gap_percent = gap_percent(reference_objective, objective)
    return report
