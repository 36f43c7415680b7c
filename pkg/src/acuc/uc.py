"""Full-horizon copper-plate unit commitment with the zonal reserve model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lp import LpBuilder, solve_lp
from .mip import MipProblem, solve_mip
from .model import (ACTIVE, DOWN, REACTIVE, UP, Case, CommitmentSchedule,
                    ReserveState, cascade_shortfall)

log = logging.getLogger(__name__)


@dataclass
class PwlColumns:
    p: int
    deltas: np.ndarray
    row: int


def build_pwl_delta(builder: LpBuilder, curve, p_lo: float = 0.0, p_hi: float = np.inf,
                    weight: float = 1.0, p_var: int | None = None) -> PwlColumns:
    """Encode ``weight * f(p)`` for a block curve with one variable per block.

    Each block variable lies in ``[0, width]`` and carries ``weight * rate`` in
    the objective; a row ties ``p`` to the block total.  Convexity of the
    weighted curve makes the in-order fill optimal, so minimizing reproduces
    ``f(p)`` exactly.
    """
    widths = np.array([w for w, _ in curve], dtype=float)
    rates = weight * np.array([r for _, r in curve], dtype=float)
    if np.any(np.diff(rates) < -1e-12):
        raise ValueError("weighted cost curve is not convex")
    if p_lo > p_hi:
        raise ValueError("p_lo > p_hi")
    if p_var is None:
        p_var = int(builder.add_vars(1, p_lo, p_hi, 0.0, "p")[0])
    deltas = builder.add_vars(len(widths), 0.0, widths, rates, "delta")
    row = builder.add_row(np.concatenate([[p_var], deltas]),
                          np.concatenate([[1.0], -np.ones(len(widths))]), 0.0, 0.0, "pwl")
    return PwlColumns(p_var, deltas, row)


def pwl_delta_cost(curve, p: float) -> float:
    """Cost of ``p`` under ``curve`` obtained by minimizing the block encoding."""
    b = LpBuilder()
    cols = build_pwl_delta(b, curve, p, p)
    sol = solve_lp(b.build())
    if sol.status != "optimal":
        raise ValueError(f"p={p} is outside the curve's range")
    return sol.objective


@dataclass
class UcModel:
    problem: MipProblem
    index: dict[str, np.ndarray]
    include_reserves: bool
    include_reactive: bool


@dataclass
class UcResult:
    commitment: CommitmentSchedule
    p: np.ndarray
    q: np.ndarray
    reserves: ReserveState | None
    objective: float
    status: str
    gap: float
    p_slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q_slack: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def surplus(self) -> float:
        return -self.objective


def build_uc_mip(case: Case, include_reserves: bool = True,
                 include_reactive: bool = True) -> UcModel:
    """Build the copper-plate UC as a minimization of negative market surplus.

    Every device gets on/start-up/shut-down binaries per period.  Copper-plate
    balances carry penalized mismatch slacks so that every instance is feasible.
    """
    J, T, K, Z = case.n_devices, case.T, len(case.products), len(case.zones)
    d = case.durations
    sign = case.sign
    b = LpBuilder()
    on_cost = np.array([dev.on_cost for dev in case.devices])
    su_cost = np.array([dev.su_cost for dev in case.devices])
    sd_cost = np.array([dev.sd_cost for dev in case.devices])
    u = b.add_vars((J, T), 0, 1, on_cost[:, None] * d[None, :], "u_on")
    su = b.add_vars((J, T), 0, 1, np.broadcast_to(su_cost[:, None], (J, T)), "u_su")
    sd = b.add_vars((J, T), 0, 1, np.broadcast_to(sd_cost[:, None], (J, T)), "u_sd")
    p = b.add_vars((J, T), 0.0, case.p_max, 0.0, "p")
    idx = {"u_on": u, "u_su": su, "u_sd": sd, "p": p}
    if include_reactive:
        q = b.add_vars((J, T), np.minimum(case.q_min, 0.0), np.maximum(case.q_max, 0.0), 0.0, "q")
        idx["q"] = q

    for j, dev in enumerate(case.devices):
        for t in range(T):
            build_pwl_delta(b, dev.cost_curve[t], weight=sign[j] * d[t], p_var=int(p[j, t]))

    init_on = np.array([float(dev.initial_on) for dev in case.devices])
    init_p = np.array([dev.initial_p for dev in case.devices])
    # transitions: u[t] - u[t-1] - su[t] + sd[t] = 0
    b.add_rows(np.stack([u[:, 0], su[:, 0], sd[:, 0]], 1), [1, -1, 1], init_on, init_on, "trans")
    if T > 1:
        b.add_rows(np.stack([u[:, 1:].ravel(), u[:, :-1].ravel(), su[:, 1:].ravel(), sd[:, 1:].ravel()], 1),
                   [1, -1, -1, 1], 0.0, 0.0, "trans")
    b.add_rows(np.stack([su.ravel(), sd.ravel()], 1), [1, 1], -np.inf, 1.0, "su_sd")
    # semicontinuity
    b.add_rows(np.stack([p.ravel(), u.ravel()], 1),
               np.stack([np.ones(J * T), -case.p_max.ravel()], 1), -np.inf, 0.0, "p_max")
    b.add_rows(np.stack([p.ravel(), u.ravel()], 1),
               np.stack([np.ones(J * T), -case.p_min.ravel()], 1), 0.0, np.inf, "p_min")
    if include_reactive:
        b.add_rows(np.stack([q.ravel(), u.ravel()], 1),
                   np.stack([np.ones(J * T), -case.q_max.ravel()], 1), -np.inf, 0.0, "q_max")
        b.add_rows(np.stack([q.ravel(), u.ravel()], 1),
                   np.stack([np.ones(J * T), -case.q_min.ravel()], 1), 0.0, np.inf, "q_min")
    # ramping
    ru = np.array([dev.p_ru for dev in case.devices])
    rusu = np.array([dev.p_ru_su for dev in case.devices])
    rd = np.array([dev.p_rd for dev in case.devices])
    rdsd = np.array([dev.p_rd_sd for dev in case.devices])
    for t in range(T):
        dt = d[t]
        if t == 0:
            cols_up = np.stack([p[:, 0], u[:, 0], su[:, 0]], 1)
            vals_up = np.stack([np.ones(J), dt * (rusu - ru), dt * (ru - rusu)], 1)
            b.add_rows(cols_up, vals_up, -np.inf, init_p + dt * rusu, "ramp_up")
            b.add_rows(np.stack([p[:, 0], u[:, 0]], 1), np.stack([np.ones(J), dt * (rd - rdsd)], 1),
                       init_p - dt * rdsd, np.inf, "ramp_down")
        else:
            cols_up = np.stack([p[:, t], p[:, t - 1], u[:, t], su[:, t]], 1)
            vals_up = np.stack([np.ones(J), -np.ones(J), dt * (rusu - ru), dt * (ru - rusu)], 1)
            b.add_rows(cols_up, vals_up, -np.inf, dt * rusu, "ramp_up")
            b.add_rows(np.stack([p[:, t], p[:, t - 1], u[:, t]], 1),
                       np.stack([np.ones(J), -np.ones(J), dt * (rd - rdsd)], 1),
                       -dt * rdsd, np.inf, "ramp_down")
    # copper-plate balances with penalized slacks
    pen = case.balance_penalty * d
    sp_plus = b.add_vars(T, 0.0, np.inf, pen, "p_slack_plus")
    sp_minus = b.add_vars(T, 0.0, np.inf, pen, "p_slack_minus")
    idx["p_slack_plus"], idx["p_slack_minus"] = sp_plus, sp_minus
    for t in range(T):
        b.add_row(np.concatenate([p[:, t], [sp_plus[t], sp_minus[t]]]),
                  np.concatenate([sign, [-1.0, 1.0]]), 0.0, 0.0, "p_balance")
    if include_reactive:
        sq_plus = b.add_vars(T, 0.0, np.inf, pen, "q_slack_plus")
        sq_minus = b.add_vars(T, 0.0, np.inf, pen, "q_slack_minus")
        idx["q_slack_plus"], idx["q_slack_minus"] = sq_plus, sq_minus
        for t in range(T):
            b.add_row(np.concatenate([q[:, t], [sq_plus[t], sq_minus[t]]]),
                      np.concatenate([sign, [-1.0, 1.0]]), 0.0, 0.0, "q_balance")

    if include_reserves and K:
        _add_reserves(case, b, idx, include_reactive)

    lp = b.build()
    binary = np.zeros(lp.n, dtype=bool)
    binary[u.ravel()] = binary[su.ravel()] = binary[sd.ravel()] = True
    return UcModel(MipProblem(lp, binary), idx, include_reserves and K > 0, include_reactive)


def _add_reserves(case: Case, b: LpBuilder, idx, include_reactive: bool) -> None:
    J, T, K, Z = case.n_devices, case.T, len(case.products), len(case.zones)
    d = case.durations
    kinds = [ACTIVE, REACTIVE] if include_reactive else [ACTIVE]
    applies = np.array([[case.product_applies(j, k) and case.products[k].power_kind in kinds
                         for k in range(K)] for j in range(J)], dtype=bool)
    cap = np.where(applies, case.reserve_cap, 0.0)
    r = b.add_vars((J, K, T), 0.0, np.broadcast_to(cap[:, :, None], (J, K, T)),
                   case.reserve_cost[:, :, None] * d[None, None, :], "r")
    zone_kind_ok = np.array([[case.zones[n].power_kind == case.products[k].power_kind
                              and case.products[k].power_kind in kinds
                              for k in range(K)] for n in range(Z)], dtype=bool).reshape(Z, K)
    s = b.add_vars((Z, K, T), 0.0, np.where(zone_kind_ok, np.inf, 0.0)[:, :, None] * np.ones(T),
                   case.shortfall_penalty[:, :, None] * d[None, None, :], "shortfall")
    idx["r"], idx["shortfall"] = r, s

    u, p = idx["u_on"], idx["p"]
    for kind in kinds:
        x = p if kind == ACTIVE else idx["q"]
        lo_b = case.p_min if kind == ACTIVE else case.q_min
        hi_b = case.p_max if kind == ACTIVE else case.q_max
        for direction in (UP, DOWN):
            group = case.product_groups[(kind, direction)]
            if not group:
                continue
            for j in range(J):
                # raising power: x + sum r <= hi * u; lowering: x - sum r >= lo * u
                raises = case.is_producer[j] == (direction == UP)
                for t in range(T):
                    cols = np.concatenate([[x[j, t], u[j, t]], r[j, group, t]])
                    if raises:
                        vals = np.concatenate([[1.0, -hi_b[j, t]], np.ones(len(group))])
                        b.add_row(cols, vals, -np.inf, 0.0, "headroom")
                    else:
                        vals = np.concatenate([[1.0, -lo_b[j, t]], -np.ones(len(group))])
                        b.add_row(cols, vals, 0.0, np.inf, "headroom")

    req = case.requirement
    for n, zone in enumerate(case.zones):
        if zone.power_kind not in kinds:
            continue
        members = np.flatnonzero(case.device_zone[zone.power_kind] == n)
        for direction in (UP, DOWN):
            group = case.product_groups[(zone.power_kind, direction)]
            for pos, k in enumerate(group):
                upto = group[:pos + 1]
                for t in range(T):
                    cols = np.concatenate([r[np.ix_(members, upto, [t])].ravel(), [s[n, k, t]]])
                    b.add_row(cols, 1.0, float(req[n, upto, t].sum()), np.inf, "cascade")


def solve_copperplate_uc(case: Case, include_reserves: bool = True, include_reactive: bool = True,
                         gap_tol: float = 1e-4, time_limit_s: float | None = 7200.0,
                         backend: str = "auto") -> UcResult:
    model = build_uc_mip(case, include_reserves, include_reactive)
    sol = solve_mip(model.problem, gap_tol=gap_tol, time_limit_s=time_limit_s, backend=backend)
    if sol.status not in ("optimal", "feasible"):
        raise RuntimeError(f"copper-plate UC failed with status {sol.status}")
    return extract_uc_result(case, model, sol.x, sol.objective, sol.status, sol.gap)


def extract_uc_result(case: Case, model: UcModel, x, objective, status="optimal", gap=0.0) -> UcResult:
    idx = model.index
    commitment = CommitmentSchedule.from_on(case, x[idx["u_on"]])
    u = commitment.u_on
    p = np.where(u > 0, x[idx["p"]], 0.0)
    q = np.where(u > 0, x[idx["q"]], 0.0) if "q" in idx else np.zeros_like(p)
    reserves = None
    if model.include_reserves:
        r = np.maximum(x[idx["r"]], 0.0) * u[:, None, :]
        reserves = ReserveState(r, cascade_shortfall(case, r))
    p_slack = x[idx["p_slack_plus"]] - x[idx["p_slack_minus"]]
    q_slack = (x[idx["q_slack_plus"]] - x[idx["q_slack_minus"]]) if "q_slack_plus" in idx else np.zeros(case.T)
    return UcResult(commitment, p, q, reserves, float(objective), status, float(gap), p_slack, q_slack)
