"""Reserve strategies applied around the per-period AC-OPFs.

* greedy allocation of remaining headroom, best product first;
* fixing the commitment-stage reserves of the most valuable providers by
  tightening their power bounds, guarded by a local balance check;
* a per-period LP that re-dispatches reserves at fixed powers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lp import OPTIMAL, LinearProgram, LpBuilder, solve_lp
from .model import (ACTIVE, DOWN, REACTIVE, UP, Case, CommitmentSchedule, DispatchState,
                    ReserveState, cascade_shortfall, ceil_fraction)

BOTH = "both"


def _headroom_arrays(case: Case, u, x, kind: str, t: int):
    """Room to raise and to lower ``x`` (p or q) at period ``t``, per device, floored at zero."""
    lo_b = case.p_min[:, t] if kind == ACTIVE else case.q_min[:, t]
    hi_b = case.p_max[:, t] if kind == ACTIVE else case.q_max[:, t]
    raise_room = np.maximum(hi_b * u - x, 0.0)
    lower_room = np.maximum(x - lo_b * u, 0.0)
    return raise_room, lower_room


def direction_room(case: Case, u, x, kind: str, t: int, direction: str) -> np.ndarray:
    """Headroom each device has for reserves of one direction."""
    raise_room, lower_room = _headroom_arrays(case, u, x, kind, t)
    prod = case.is_producer
    if direction == UP:
        return np.where(prod, raise_room, lower_room)
    return np.where(prod, lower_room, raise_room)


def _kinds(power_kind: str) -> list[str]:
    return [ACTIVE, REACTIVE] if power_kind == BOTH else [power_kind]


def greedy_allocate(case: Case, commitment: CommitmentSchedule, dispatch: DispatchState,
                    power_kind: str = BOTH, base: ReserveState | None = None) -> ReserveState:
    """Fill each device's headroom with reserves, highest-quality product first.

    Zone requirements are ignored; every device offers all the headroom it has.
    Products of power kinds not requested are copied from ``base`` (zero when
    absent), and the headroom they already use is respected.
    """
    K, T = len(case.products), case.T
    out = base.copy() if base is not None else ReserveState.zeros(case)
    kinds = _kinds(power_kind)
    cap = case.reserve_cap
    for kind in kinds:
        for direction in (UP, DOWN):
            group = case.product_groups[(kind, direction)]
            if not group:
                continue
            out.r[:, group, :] = 0.0
            applies = np.array([[case.product_applies(j, k) for k in group]
                                for j in range(case.n_devices)], dtype=bool).reshape(case.n_devices, len(group))
            for t in range(T):
                u = commitment.u_on[:, t].astype(float)
                x = dispatch.p[:, t] if kind == ACTIVE else dispatch.q[:, t]
                room = direction_room(case, u, x, kind, t, direction) * (u > 0)
                for pos, k in enumerate(group):
                    take = np.where(applies[:, pos], np.minimum(room, cap[:, k]), 0.0)
                    out.r[:, k, t] = take
                    room = room - take
    out.shortfall = cascade_shortfall(case, out.r)
    return out


def reserve_objective(case: Case, reserves: ReserveState) -> float:
    """Reserve cost plus shortfall penalty, shortfalls recomputed from the quantities."""
    d = case.durations
    cost = float(np.einsum("jkt,jk,t->", reserves.r, case.reserve_cost, d))
    s = cascade_shortfall(case, reserves.r)
    pen = float(np.einsum("zkt,zk,t->", s, case.shortfall_penalty, d))
    return cost + pen


# ---------------------------------------------------------------------------
# bound tightening


def _reserve_totals(case: Case, r_jkt) -> tuple[np.ndarray, np.ndarray]:
    up = r_jkt[..., case.product_groups[(ACTIVE, UP)], :].sum(axis=-2)
    down = r_jkt[..., case.product_groups[(ACTIVE, DOWN)], :].sum(axis=-2)
    return up, down


def tightened_range(case: Case, j: int, t: int, up: float, down: float, u_on: int = 1):
    """Real-power range of device ``j`` left once ``up``/``down`` reserves are held back."""
    lo, hi = case.p_min[j, t] * u_on, case.p_max[j, t] * u_on
    if case.is_producer[j]:
        return lo + down, hi - up
    return lo + up, hi - down


def local_balance_guard(case: Case, j: int, fixed_reserves, t: int, u_on=None) -> bool:
    """Whether fixing device ``j``'s real reserves at ``t`` leaves its bus able to balance.

    The device's tightened range, oriented as injection, plus the injection
    hull of the other online devices at the bus must meet the interval
    ``[-L, L]``, where ``L`` sums the ratings of the in-service lines at the bus.
    ``fixed_reserves`` holds one quantity per product.
    """
    fixed_reserves = np.asarray(fixed_reserves, float)
    if not np.any(fixed_reserves > 0):
        return True
    u_on = np.ones(case.n_devices, dtype=int) if u_on is None else np.asarray(u_on)
    up = fixed_reserves[case.product_groups[(ACTIVE, UP)]].sum()
    down = fixed_reserves[case.product_groups[(ACTIVE, DOWN)]].sum()
    lo, hi = tightened_range(case, j, t, up, down, int(u_on[j]))
    if lo > hi:
        return False
    s = case.sign[j]
    inj_lo, inj_hi = min(s * lo, s * hi), max(s * lo, s * hi)
    bus = case.device_bus[j]
    for k in np.flatnonzero((case.device_bus == bus) & (u_on > 0)):
        if k == j:
            continue
        a, b = case.sign[k] * case.p_min[k, t], case.sign[k] * case.p_max[k, t]
        inj_lo += min(a, b)
        inj_hi += max(a, b)
    cap = sum(case.lines[l].s_max for l in case.in_service_lines
              if case.line_from[l] == bus or case.line_to[l] == bus)
    return bool(inj_lo <= cap and inj_hi >= -cap)


@dataclass
class BoundOverrides:
    """Per device-period real-power bounds replacing the static ones where ``mask`` is set."""

    p_lo: np.ndarray
    p_hi: np.ndarray
    mask: np.ndarray
    selected: list[int] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)

    @classmethod
    def none(cls, case: Case) -> "BoundOverrides":
        J, T = case.n_devices, case.T
        return cls(np.zeros((J, T)), np.zeros((J, T)), np.zeros((J, T), dtype=bool))

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def reserve_values(case: Case, r: np.ndarray) -> np.ndarray:
    """Penalty-weighted real reserve each device provides over the horizon."""
    J, K, T = r.shape
    zone = case.device_zone[ACTIVE]
    pen = np.zeros((J, K))
    has = zone >= 0
    pen[has] = case.shortfall_penalty[zone[has]]
    active = np.array([p.power_kind == ACTIVE for p in case.products], dtype=bool)
    pen[:, ~active] = 0.0
    return np.einsum("jkt,jk,t->j", r, pen, case.durations)


def tighten_bounds_from_reserves(case: Case, commitment: CommitmentSchedule, reserves: ReserveState,
                                 gamma: float, guard: bool = True) -> BoundOverrides:
    """Hold back the commitment-stage real reserves of the top ``gamma`` providers.

    Providers are devices with positive reserve value; the best
    ``ceil(gamma * providers)`` are selected (ties by device order).  For each
    selected device and online period that passes the guard, the power bounds
    shrink by the reserves it carries.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    out = BoundOverrides.none(case)
    values = reserve_values(case, reserves.r)
    providers = [j for j in range(case.n_devices) if values[j] > 0]
    n_sel = ceil_fraction(gamma, len(providers))
    ranked = sorted(providers, key=lambda j: (-values[j], j))
    out.selected = sorted(ranked[:n_sel])
    up_all, down_all = _reserve_totals(case, reserves.r)
    for j in out.selected:
        for t in range(case.T):
            if not commitment.u_on[j, t]:
                continue
            if up_all[j, t] <= 0 and down_all[j, t] <= 0:
                continue
            if guard and not local_balance_guard(case, j, reserves.r[j, :, t], t, commitment.u_on[:, t]):
                out.events.append(("guard_rejected", j, t))
                continue
            lo, hi = tightened_range(case, j, t, up_all[j, t], down_all[j, t])
            if lo > hi:
                mid = 0.5 * (lo + hi)
                lo = hi = mid
                out.events.append(("empty_override", j, t))
            out.p_lo[j, t], out.p_hi[j, t] = lo, hi
            out.mask[j, t] = True
    return out


# ---------------------------------------------------------------------------
# LP re-dispatch


@dataclass
class ReserveLp:
    lp: LinearProgram
    r: np.ndarray        # column indices (J, K)
    s: np.ndarray        # column indices (Z, K)


def build_reserve_lp(case: Case, commitment: CommitmentSchedule, dispatch: DispatchState, t: int) -> ReserveLp:
    """Reserve LP of period ``t`` at fixed commitment and powers."""
    J, K, Z = case.n_devices, len(case.products), len(case.zones)
    d = case.durations[t]
    u = commitment.u_on[:, t].astype(float)
    b = LpBuilder()
    applies = np.array([[case.product_applies(j, k) for k in range(K)] for j in range(J)],
                       dtype=bool).reshape(J, K)
    ub = np.where(applies & (u[:, None] > 0), case.reserve_cap, 0.0)
    r = b.add_vars((J, K), 0.0, ub, d * case.reserve_cost, "r")
    s_ok = np.array([[case.zones[n].power_kind == case.products[k].power_kind for k in range(K)]
                     for n in range(Z)], dtype=bool).reshape(Z, K)
    s = b.add_vars((Z, K), 0.0, np.where(s_ok, np.inf, 0.0), d * case.shortfall_penalty, "shortfall")
    for kind in (ACTIVE, REACTIVE):
        x = dispatch.p[:, t] if kind == ACTIVE else dispatch.q[:, t]
        for direction in (UP, DOWN):
            group = case.product_groups[(kind, direction)]
            if not group:
                continue
            room = direction_room(case, u, x, kind, t, direction)
            for j in np.flatnonzero(u > 0):
                b.add_row(r[j, group], 1.0, -np.inf, float(room[j]), "headroom")
    req = case.requirement[:, :, t]
    for n, zone in enumerate(case.zones):
        members = np.flatnonzero(case.device_zone[zone.power_kind] == n)
        for direction in (UP, DOWN):
            group = case.product_groups[(zone.power_kind, direction)]
            for pos, k in enumerate(group):
                upto = group[:pos + 1]
                cols = np.concatenate([r[np.ix_(members, upto)].ravel(), [s[n, k]]])
                b.add_row(cols, 1.0, float(req[n, upto].sum()), np.inf, "cascade")
    return ReserveLp(b.build(), r, s)


def solve_reserve_period(case: Case, commitment: CommitmentSchedule, dispatch: DispatchState, t: int):
    model = build_reserve_lp(case, commitment, dispatch, t)
    sol = solve_lp(model.lp)
    if sol.status != OPTIMAL:
        raise RuntimeError(f"reserve LP at t={t} ended with status {sol.status}")
    r = np.maximum(sol.x[model.r], 0.0)
    return r, sol.objective


def redispatch_reserves(case: Case, commitment: CommitmentSchedule, dispatch: DispatchState,
                        threads: int = 1) -> ReserveState:
    """Solve every period's reserve LP and assemble the result by period index."""
    out = ReserveState.zeros(case)

    def work(t):
        return solve_reserve_period(case, commitment, dispatch, t)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(case.T)))
    else:
        results = [work(t) for t in range(case.T)]
    for t, (r, _) in enumerate(results):
        out.r[:, :, t] = r
    out.shortfall = cascade_shortfall(case, out.r)
    return out


def trim_to_headroom(case: Case, commitment: CommitmentSchedule, dispatch: DispatchState,
                     reserves: ReserveState, power_kind: str = ACTIVE) -> ReserveState:
    """Scale down fixed reserves that no longer fit the headroom at the final powers.

    Within each device/direction the lowest-quality products are cut first.
    """
    out = reserves.copy()
    for kind in _kinds(power_kind):
        for direction in (UP, DOWN):
            group = case.product_groups[(kind, direction)]
            if not group:
                continue
            for t in range(case.T):
                u = commitment.u_on[:, t].astype(float)
                x = dispatch.p[:, t] if kind == ACTIVE else dispatch.q[:, t]
                room = direction_room(case, u, x, kind, t, direction) * (u > 0)
                for k in group:
                    keep = np.minimum(out.r[:, k, t], room)
                    out.r[:, k, t] = keep
                    room = room - keep
    out.shortfall = cascade_shortfall(case, out.r)
    return out

