"""Domain types for the AC unit-commitment problem and cheap shared computations.

All power quantities are per unit on the system base, durations are in hours
and money in dollars.  Per-period quantities are indexed ``[t]`` with
``t = 0 .. T-1``; the pre-horizon state of a device lives in ``initial_on`` and
``initial_p``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

PRODUCER = "producer"
CONSUMER = "consumer"
ACTIVE = "active"
REACTIVE = "reactive"
UP = "up"
DOWN = "down"

DEVICE_KINDS = (PRODUCER, CONSUMER)
POWER_KINDS = (ACTIVE, REACTIVE)
DIRECTIONS = (UP, DOWN)


def _floats(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


def _frozen(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeGrid:
    durations: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "durations", _floats(self.durations))

    @property
    def T(self) -> int:
        return len(self.durations)

    @classmethod
    def uniform(cls, T: int = 48, duration: float = 1.0) -> "TimeGrid":
        return cls((duration,) * T)


@dataclass(frozen=True)
class Bus:
    id: str
    v_min: float = 0.9
    v_max: float = 1.1
    is_reference: bool = False
    active_zone: str | None = None
    reactive_zone: str | None = None


@dataclass(frozen=True)
class ACLine:
    id: str
    from_bus: str
    to_bus: str
    g_sr: float
    b_sr: float
    g_fr: float = 0.0
    g_to: float = 0.0
    b_fr: float = 0.0
    b_to: float = 0.0
    b_ch: float = 0.0
    s_max: float = 1e3
    status: bool = True


@dataclass(frozen=True)
class Device:
    """A dispatchable producer or consumer.

    ``cost_curve[t]`` is a sequence of ``(width, rate)`` blocks filled from zero
    power upwards.  For producers the rates are marginal costs and must be
    non-decreasing; for consumers they are marginal values and must be
    non-increasing, so that surplus is concave in every case.
    """

    id: str
    kind: str
    bus: str
    p_min: tuple[float, ...]
    p_max: tuple[float, ...]
    q_min: tuple[float, ...]
    q_max: tuple[float, ...]
    p_ru: float
    p_rd: float
    p_ru_su: float
    p_rd_sd: float
    cost_curve: tuple[tuple[tuple[float, float], ...], ...]
    initial_on: bool = False
    initial_p: float = 0.0
    su_cost: float = 0.0
    sd_cost: float = 0.0
    on_cost: float = 0.0
    reserve_cost: Mapping[str, float] = field(default_factory=dict)
    reserve_cap: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("p_min", "p_max", "q_min", "q_max"):
            object.__setattr__(self, name, _floats(getattr(self, name)))
        curve = tuple(tuple((float(w), float(r)) for w, r in blocks)
                      for blocks in self.cost_curve)
        object.__setattr__(self, "cost_curve", curve)
        object.__setattr__(self, "reserve_cost", dict(self.reserve_cost))
        object.__setattr__(self, "reserve_cap", dict(self.reserve_cap))

    @property
    def is_producer(self) -> bool:
        return self.kind == PRODUCER


@dataclass(frozen=True)
class ReserveProduct:
    id: str
    direction: str
    power_kind: str
    quality_rank: int


@dataclass(frozen=True)
class ReserveZone:
    id: str
    power_kind: str
    requirement: Mapping[str, tuple[float, ...]]
    shortfall_penalty: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "requirement",
                           {k: _floats(v) for k, v in self.requirement.items()})
        object.__setattr__(self, "shortfall_penalty",
                           {k: float(v) for k, v in self.shortfall_penalty.items()})


def default_products() -> tuple[ReserveProduct, ...]:
    """Regulation, synchronized and ramping products in both directions."""
    return (
        ReserveProduct("reg_up", UP, ACTIVE, 1),
        ReserveProduct("syn", UP, ACTIVE, 2),
        ReserveProduct("ramp_up_on", UP, ACTIVE, 3),
        ReserveProduct("reg_down", DOWN, ACTIVE, 1),
        ReserveProduct("ramp_down_on", DOWN, ACTIVE, 2),
        ReserveProduct("q_up", UP, REACTIVE, 1),
        ReserveProduct("q_down", DOWN, REACTIVE, 1),
    )


@dataclass(frozen=True)
class Case:
    time_grid: TimeGrid
    buses: tuple[Bus, ...]
    lines: tuple[ACLine, ...]
    devices: tuple[Device, ...]
    zones: tuple[ReserveZone, ...] = ()
    products: tuple[ReserveProduct, ...] = ()
    balance_penalty: float = 1e6
    line_overload_penalty: float = 1e5
    name: str = "case"

    def __post_init__(self):
        for name in ("buses", "lines", "devices", "zones", "products"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    # -- sizes -----------------------------------------------------------
    @property
    def T(self) -> int:
        return self.time_grid.T

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    # -- index maps (computed once; the case itself never changes) --------
    @cached_property
    def durations(self) -> np.ndarray:
        return _frozen(self.time_grid.durations)

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def device_index(self) -> dict[str, int]:
        return {d.id: j for j, d in enumerate(self.devices)}

    @cached_property
    def product_index(self) -> dict[str, int]:
        return {p.id: k for k, p in enumerate(self.products)}

    @cached_property
    def zone_index(self) -> dict[str, int]:
        return {z.id: n for n, z in enumerate(self.zones)}

    @cached_property
    def reference_bus(self) -> int:
        refs = [i for i, b in enumerate(self.buses) if b.is_reference]
        return refs[0] if refs else 0

    @cached_property
    def device_bus(self) -> np.ndarray:
        return np.array([self.bus_index[d.bus] for d in self.devices], dtype=int)

    @cached_property
    def is_producer(self) -> np.ndarray:
        return np.array([d.kind == PRODUCER for d in self.devices], dtype=bool)

    @cached_property
    def sign(self) -> np.ndarray:
        """+1 for producers, -1 for consumers (injection orientation)."""
        return np.where(self.is_producer, 1.0, -1.0)

    @cached_property
    def p_min(self) -> np.ndarray:
        return _frozen([d.p_min for d in self.devices]).reshape(self.n_devices, self.T)

    @cached_property
    def p_max(self) -> np.ndarray:
        return _frozen([d.p_max for d in self.devices]).reshape(self.n_devices, self.T)

    @cached_property
    def q_min(self) -> np.ndarray:
        return _frozen([d.q_min for d in self.devices]).reshape(self.n_devices, self.T)

    @cached_property
    def q_max(self) -> np.ndarray:
        return _frozen([d.q_max for d in self.devices]).reshape(self.n_devices, self.T)

    @cached_property
    def line_from(self) -> np.ndarray:
        return np.array([self.bus_index[l.from_bus] for l in self.lines], dtype=int)

    @cached_property
    def line_to(self) -> np.ndarray:
        return np.array([self.bus_index[l.to_bus] for l in self.lines], dtype=int)

    @cached_property
    def line_status(self) -> np.ndarray:
        return np.array([float(l.status) for l in self.lines])

    @cached_property
    def in_service_lines(self) -> tuple[int, ...]:
        return tuple(l for l, line in enumerate(self.lines) if line.status)

    def product_group(self, power_kind: str, direction: str) -> list[int]:
        """Product indices of one (power kind, direction), best quality first."""
        ks = [k for k, p in enumerate(self.products)
              if p.power_kind == power_kind and p.direction == direction]
        return sorted(ks, key=lambda k: (self.products[k].quality_rank, k))

    @cached_property
    def product_groups(self) -> dict[tuple[str, str], list[int]]:
        return {(pk, dr): self.product_group(pk, dr)
                for pk in POWER_KINDS for dr in DIRECTIONS}

    @cached_property
    def device_zone(self) -> dict[str, np.ndarray]:
        """Zone index per device for each power kind (-1 when unzoned)."""
        out = {}
        for pk in POWER_KINDS:
            z = np.full(self.n_devices, -1, dtype=int)
            for j, d in enumerate(self.devices):
                b = self.buses[self.bus_index[d.bus]]
                zid = b.active_zone if pk == ACTIVE else b.reactive_zone
                if zid is not None and zid in self.zone_index:
                    z[j] = self.zone_index[zid]
            out[pk] = z
        return out

    def zone_members(self, zone_id: str) -> list[str]:
        zone = self.zones[self.zone_index[zone_id]]
        attr = "active_zone" if zone.power_kind == ACTIVE else "reactive_zone"
        return [b.id for b in self.buses if getattr(b, attr) == zone_id]

    @cached_property
    def requirement(self) -> np.ndarray:
        """Requirement array shaped (zones, products, T); zero where undefined."""
        req = np.zeros((len(self.zones), len(self.products), self.T))
        for n, z in enumerate(self.zones):
            for pid, vals in z.requirement.items():
                if pid in self.product_index and len(vals) == self.T:
                    req[n, self.product_index[pid]] = vals
        return req

    @cached_property
    def shortfall_penalty(self) -> np.ndarray:
        pen = np.zeros((len(self.zones), len(self.products)))
        for n, z in enumerate(self.zones):
            for pid, v in z.shortfall_penalty.items():
                if pid in self.product_index:
                    pen[n, self.product_index[pid]] = v
        return pen

    @cached_property
    def reserve_cost(self) -> np.ndarray:
        c = np.zeros((self.n_devices, len(self.products)))
        for j, d in enumerate(self.devices):
            for pid, v in d.reserve_cost.items():
                if pid in self.product_index:
                    c[j, self.product_index[pid]] = v
        return c

    @cached_property
    def reserve_cap(self) -> np.ndarray:
        c = np.full((self.n_devices, len(self.products)), np.inf)
        for j, d in enumerate(self.devices):
            for pid, v in d.reserve_cap.items():
                if pid in self.product_index:
                    c[j, self.product_index[pid]] = v
        return c

    def product_applies(self, j: int, k: int) -> bool:
        """Whether device ``j`` sits in a zone that carries product ``k``."""
        pk = self.products[k].power_kind
        return self.device_zone[pk][j] >= 0


# ---------------------------------------------------------------------------
# solution containers


@dataclass
class CommitmentSchedule:
    u_on: np.ndarray
    u_su: np.ndarray
    u_sd: np.ndarray

    @classmethod
    def from_on(cls, case: Case, u_on) -> "CommitmentSchedule":
        """Derive start-up/shut-down indicators from an on-status matrix."""
        u_on = np.asarray(np.rint(u_on), dtype=np.int8).reshape(case.n_devices, case.T)
        init = np.array([int(d.initial_on) for d in case.devices], dtype=np.int8)
        prev = np.concatenate([init[:, None], u_on[:, :-1]], axis=1)
        diff = u_on - prev
        return cls(u_on, (diff > 0).astype(np.int8), (diff < 0).astype(np.int8))

    def copy(self) -> "CommitmentSchedule":
        return CommitmentSchedule(self.u_on.copy(), self.u_su.copy(), self.u_sd.copy())


@dataclass
class DispatchState:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    p_fr: np.ndarray
    q_fr: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    p_mismatch: np.ndarray
    q_mismatch: np.ndarray

    @classmethod
    def empty(cls, case: Case) -> "DispatchState":
        J, I, L, T = case.n_devices, case.n_buses, case.n_lines, case.T
        z = np.zeros
        return cls(z((J, T)), z((J, T)), np.ones((I, T)), z((I, T)),
                   z((L, T)), z((L, T)), z((L, T)), z((L, T)), z((I, T)), z((I, T)))


@dataclass
class ReserveState:
    r: np.ndarray          # (devices, products, T)
    shortfall: np.ndarray  # (zones, products, T)

    @classmethod
    def zeros(cls, case: Case) -> "ReserveState":
        K = len(case.products)
        return cls(np.zeros((case.n_devices, K, case.T)),
                   np.zeros((len(case.zones), K, case.T)))

    def copy(self) -> "ReserveState":
        return ReserveState(self.r.copy(), self.shortfall.copy())


@dataclass
class FullSolution:
    commitment: CommitmentSchedule
    dispatch: DispatchState
    reserves: ReserveState
    meta: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# validation


class Violation(NamedTuple):
    kind: str
    subject: str
    message: str
    t: int | None = None


def _duplicates(ids: Sequence[str]) -> list[str]:
    seen, dup = set(), []
    for i in ids:
        if i in seen and i not in dup:
            dup.append(i)
        seen.add(i)
    return dup


def validate_case(case: Case) -> list[Violation]:
    """Check every type invariant; an empty list means the case is usable."""
    out: list[Violation] = []
    T = case.T
    if T < 1:
        out.append(Violation("time_grid", "durations", "at least one period required"))
    for t, d in enumerate(case.time_grid.durations):
        if not d > 0:
            out.append(Violation("time_grid", "durations", f"non-positive duration {d}", t))

    for what, items in (("bus", case.buses), ("line", case.lines),
                        ("device", case.devices), ("zone", case.zones),
                        ("product", case.products)):
        for i in _duplicates([x.id for x in items]):
            out.append(Violation("duplicate_id", i, f"duplicate {what} id {i!r}"))

    bus_ids = {b.id for b in case.buses}
    zone_by_id = {z.id: z for z in case.zones}
    prod_by_id = {p.id: p for p in case.products}

    if not case.buses:
        out.append(Violation("bus", "buses", "case has no buses"))
    n_ref = sum(b.is_reference for b in case.buses)
    if case.buses and n_ref != 1:
        out.append(Violation("reference", "buses", f"expected one reference bus, found {n_ref}"))
    for b in case.buses:
        if not 0 < b.v_min <= b.v_max:
            out.append(Violation("bounds", b.id, f"voltage bounds [{b.v_min}, {b.v_max}] invalid"))
        for attr, kind in (("active_zone", ACTIVE), ("reactive_zone", REACTIVE)):
            zid = getattr(b, attr)
            if zid is None:
                continue
            if zid not in zone_by_id:
                out.append(Violation("dangling_reference", b.id, f"{attr} {zid!r} does not exist"))
            elif zone_by_id[zid].power_kind != kind:
                out.append(Violation("zone_kind", b.id, f"{attr} {zid!r} is not a {kind} zone"))

    for line in case.lines:
        for end in (line.from_bus, line.to_bus):
            if end not in bus_ids:
                out.append(Violation("dangling_reference", line.id, f"bus {end!r} does not exist"))
        if line.from_bus == line.to_bus:
            out.append(Violation("line", line.id, "from_bus equals to_bus"))
        if not line.s_max > 0:
            out.append(Violation("line", line.id, "s_max must be positive"))

    for d in case.devices:
        if d.kind not in DEVICE_KINDS:
            out.append(Violation("device", d.id, f"unknown kind {d.kind!r}"))
        if d.bus not in bus_ids:
            out.append(Violation("dangling_reference", d.id, f"bus {d.bus!r} does not exist"))
        for name in ("p_min", "p_max", "q_min", "q_max"):
            if len(getattr(d, name)) != T:
                out.append(Violation("dimension", d.id, f"{name} has {len(getattr(d, name))} entries, expected {T}"))
        if len(d.cost_curve) != T:
            out.append(Violation("dimension", d.id, f"cost_curve has {len(d.cost_curve)} periods, expected {T}"))
        for t in range(min(T, len(d.p_min), len(d.p_max))):
            if d.p_min[t] > d.p_max[t]:
                out.append(Violation("bounds", d.id, f"p_min {d.p_min[t]} > p_max {d.p_max[t]}", t))
            if d.p_min[t] < 0:
                out.append(Violation("bounds", d.id, f"negative p_min {d.p_min[t]}", t))
        for t in range(min(T, len(d.q_min), len(d.q_max))):
            if d.q_min[t] > d.q_max[t]:
                out.append(Violation("bounds", d.id, f"q_min {d.q_min[t]} > q_max {d.q_max[t]}", t))
        for name in ("p_ru", "p_rd", "p_ru_su", "p_rd_sd"):
            if getattr(d, name) < 0:
                out.append(Violation("ramp", d.id, f"{name} is negative"))
        for t, blocks in enumerate(d.cost_curve[:T]):
            rates = [r for _, r in blocks]
            if any(w < 0 for w, _ in blocks):
                out.append(Violation("cost_curve", d.id, "negative block width", t))
            diffs = np.diff(rates) if len(rates) > 1 else np.zeros(0)
            if d.kind == PRODUCER and np.any(diffs < 0):
                out.append(Violation("cost_curve", d.id, "producer marginal costs must be non-decreasing", t))
            if d.kind == CONSUMER and np.any(diffs > 0):
                out.append(Violation("cost_curve", d.id, "consumer marginal values must be non-increasing", t))
            if t < len(d.p_max) and sum(w for w, _ in blocks) < d.p_max[t] - 1e-9:
                out.append(Violation("cost_curve", d.id, "blocks do not cover p_max", t))
        for pid in list(d.reserve_cost) + list(d.reserve_cap):
            if pid not in prod_by_id:
                out.append(Violation("dangling_reference", d.id, f"product {pid!r} does not exist"))
        for pid, cap in d.reserve_cap.items():
            if cap < 0:
                out.append(Violation("reserve_cap", d.id, f"negative cap for {pid!r}"))

    ranks: dict[tuple[str, str], list[int]] = {}
    for p in case.products:
        if p.direction not in DIRECTIONS or p.power_kind not in POWER_KINDS:
            out.append(Violation("product", p.id, "bad direction or power kind"))
            continue
        ranks.setdefault((p.power_kind, p.direction), []).append(p.quality_rank)
    for key, rs in ranks.items():
        if len(set(rs)) != len(rs):
            out.append(Violation("product", "/".join(key), "quality ranks not unique"))

    for z in case.zones:
        if z.power_kind not in POWER_KINDS:
            out.append(Violation("zone", z.id, f"unknown power kind {z.power_kind!r}"))
        for pid, vals in z.requirement.items():
            if pid not in prod_by_id:
                out.append(Violation("dangling_reference", z.id, f"product {pid!r} does not exist"))
                continue
            if prod_by_id[pid].power_kind != z.power_kind:
                out.append(Violation("zone_kind", z.id, f"product {pid!r} has the wrong power kind"))
            if len(vals) != T:
                out.append(Violation("dimension", z.id, f"requirement {pid!r} has {len(vals)} entries, expected {T}"))
            if any(v < 0 for v in vals):
                out.append(Violation("zone", z.id, f"negative requirement for {pid!r}"))
        for pid, pen in z.shortfall_penalty.items():
            if pid not in prod_by_id:
                out.append(Violation("dangling_reference", z.id, f"product {pid!r} does not exist"))
            if pen < 0:
                out.append(Violation("zone", z.id, f"negative penalty for {pid!r}"))

    if not out and case.buses:
        adj: dict[str, list[str]] = {b.id: [] for b in case.buses}
        for line in case.lines:
            if line.status:
                adj[line.from_bus].append(line.to_bus)
                adj[line.to_bus].append(line.from_bus)
        start = case.buses[0].id
        seen = {start}
        queue = deque([start])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        if len(seen) != len(case.buses):
            out.append(Violation("connectivity", "lines",
                                 f"network has {len(case.buses) - len(seen)} buses unreachable from {start!r}"))
    return out


# ---------------------------------------------------------------------------
# ramping and headroom


def ramp_rates(device: Device, u_on_t, u_su_t):
    """Effective (up, down) ramp rates for the given status, per hour."""
    up = device.p_ru * (u_on_t - u_su_t) + device.p_ru_su * (u_su_t + 1 - u_on_t)
    down = device.p_rd * u_on_t + device.p_rd_sd * (1 - u_on_t)
    return up, down


def ramp_envelope(device: Device, p_prev: float, u_on_prev: int, u_on_t: int,
                  u_su_t: int, d_t: float) -> tuple[float, float]:
    """Interval of real power reachable at ``t`` from ``p_prev`` at ``t-1``."""
    up, down = ramp_rates(device, u_on_t, u_su_t)
    return p_prev - d_t * down, p_prev + d_t * up


def headroom(device: Device, p: float, u_on: int, t: int, direction: str,
             power_kind: str = ACTIVE) -> float:
    """Room between the operating point and the bound that a reserve uses.

    Producers provide up reserve by raising output and down reserve by lowering
    it; consumers mirror this.  With ``power_kind='reactive'`` the reactive
    bounds are used.
    """
    if power_kind == ACTIVE:
        lo, hi = device.p_min[t] * u_on, device.p_max[t] * u_on
    else:
        lo, hi = device.q_min[t] * u_on, device.q_max[t] * u_on
    raise_room, lower_room = hi - p, p - lo
    if device.kind == PRODUCER:
        return raise_room if direction == UP else lower_room
    return lower_room if direction == UP else raise_room


def reachable_bounds(case: Case, commitment: CommitmentSchedule,
                     from_initial: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-period real-power intervals from which the rest of the horizon stays ramp feasible.

    Backward recursion over the static semicontinuous bounds: a power level at
    ``t`` is kept only if some level allowed at ``t+1`` is reachable from it.
    With ``from_initial`` a forward pass from the initial powers also drops
    levels that cannot be reached, leaving exactly the levels that lie on some
    ramp-feasible trajectory.  Intervals that collapse numerically are pinned
    to their midpoint.
    """
    J, T = case.n_devices, case.T
    u, su = commitment.u_on, commitment.u_su
    lo = case.p_min * u
    hi = case.p_max * u
    d = case.durations
    ru = np.array([dev.p_ru for dev in case.devices])[:, None]
    rusu = np.array([dev.p_ru_su for dev in case.devices])[:, None]
    rd = np.array([dev.p_rd for dev in case.devices])[:, None]
    rdsd = np.array([dev.p_rd_sd for dev in case.devices])[:, None]
    up = ru * (u - su) + rusu * (su + 1 - u)
    down = rd * u + rdsd * (1 - u)
    flo, fhi = lo.astype(float).copy(), hi.astype(float).copy()
    for t in range(T - 2, -1, -1):
        flo[:, t] = np.maximum(lo[:, t], flo[:, t + 1] - d[t + 1] * up[:, t + 1])
        fhi[:, t] = np.minimum(hi[:, t], fhi[:, t + 1] + d[t + 1] * down[:, t + 1])
        bad = flo[:, t] > fhi[:, t]
        if np.any(bad):
            mid = 0.5 * (flo[bad, t] + fhi[bad, t])
            flo[bad, t] = mid
            fhi[bad, t] = mid
    if from_initial:
        init = np.array([dev.initial_p for dev in case.devices])
        prev_lo, prev_hi = init, init
        for t in range(T):
            lo_t = np.maximum(flo[:, t], prev_lo - d[t] * down[:, t])
            hi_t = np.minimum(fhi[:, t], prev_hi + d[t] * up[:, t])
            bad = lo_t > hi_t
            if np.any(bad):
                mid = 0.5 * (lo_t[bad] + hi_t[bad])
                lo_t[bad] = mid
                hi_t[bad] = mid
            flo[:, t], fhi[:, t] = lo_t, hi_t
            prev_lo, prev_hi = lo_t, hi_t
    return flo, fhi


def pwl_value(blocks: Sequence[tuple[float, float]], p: float) -> float:
    """Evaluate a block curve by filling blocks in order up to ``p``."""
    total, remaining = 0.0, max(p, 0.0)
    for w, r in blocks:
        take = min(w, remaining)
        total += take * r
        remaining -= take
        if remaining <= 0:
            break
    if remaining > 0 and blocks:
        total += remaining * blocks[-1][1]
    return total


def cascade_shortfall(case: Case, r: np.ndarray) -> np.ndarray:
    """Smallest zone shortfalls that satisfy the cumulative reserve balances."""
    Z, K, T = len(case.zones), len(case.products), case.T
    s = np.zeros((Z, K, T))
    req = case.requirement
    for n, zone in enumerate(case.zones):
        members = case.device_zone[zone.power_kind] == n
        for direction in DIRECTIONS:
            group = case.product_groups[(zone.power_kind, direction)]
            cum_req = np.zeros(T)
            cum_prov = np.zeros(T)
            for k in group:
                cum_req = cum_req + req[n, k]
                cum_prov = cum_prov + r[members, k, :].sum(axis=0)
                s[n, k] = np.maximum(0.0, cum_req - cum_prov)
    return s


def is_close_interval(lo: float, hi: float, tol: float = 1e-12) -> bool:
    return hi - lo <= tol * max(1.0, abs(lo), abs(hi))


def ceil_fraction(gamma: float, n: int) -> int:
    """Number of items in the top ``gamma`` fraction of ``n``, rounding up."""
    return min(n, int(math.ceil(gamma * n - 1e-9)))
