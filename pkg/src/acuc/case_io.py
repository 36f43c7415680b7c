"""JSON case and solution files, plus a seeded synthetic case generator.

Floats are written with Python's shortest round-trip representation, so
reading a written file reproduces every value bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from .model import (ACTIVE, CONSUMER, DOWN, PRODUCER, REACTIVE, UP, ACLine, Bus, Case,
                    CommitmentSchedule, Device, DispatchState, FullSolution, ReserveProduct,
                    ReserveState, ReserveZone, TimeGrid, Violation, default_products,
                    validate_case)


class SchemaError(ValueError):
    """Input does not match the JSON schema."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path or '<root>'}: {reason}")
        self.path = path
        self.reason = reason


class CaseValidationError(ValueError):
    """Input is well formed but breaks a model invariant."""

    def __init__(self, violations: list[Violation]):
        lines = [f"{v.kind} [{v.subject}]{'' if v.t is None else f' t={v.t}'}: {v.message}"
                 for v in violations]
        super().__init__("; ".join(lines))
        self.violations = violations


class DimensionError(ValueError):
    """Solution arrays do not match the case dimensions."""


class InfeasibleSpecError(ValueError):
    """The generator could not meet the requested margins."""


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("acuc").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def _check_schema(doc, name: str) -> None:
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path)
        if err.validator == "required":
            missing = [r for r in err.validator_value if r not in err.instance]
            if missing:
                path = f"{path}.{missing[0]}" if path else missing[0]
        raise SchemaError(path, err.message)


def _parse(data) -> object:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc


def _dump(doc) -> bytes:
    return (json.dumps(doc, indent=1, allow_nan=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# cases


def case_to_dict(case: Case) -> dict:
    return {
        "name": case.name,
        "time_grid": {"durations": list(case.time_grid.durations)},
        "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max, "is_reference": b.is_reference,
                   "active_zone": b.active_zone, "reactive_zone": b.reactive_zone}
                  for b in case.buses],
        "lines": [{"id": l.id, "from_bus": l.from_bus, "to_bus": l.to_bus, "g_sr": l.g_sr,
                   "b_sr": l.b_sr, "g_fr": l.g_fr, "g_to": l.g_to, "b_fr": l.b_fr, "b_to": l.b_to,
                   "b_ch": l.b_ch, "s_max": l.s_max, "status": l.status} for l in case.lines],
        "devices": [{"id": d.id, "kind": d.kind, "bus": d.bus, "p_min": list(d.p_min),
                     "p_max": list(d.p_max), "q_min": list(d.q_min), "q_max": list(d.q_max),
                     "p_ru": d.p_ru, "p_rd": d.p_rd, "p_ru_su": d.p_ru_su, "p_rd_sd": d.p_rd_sd,
                     "initial_on": d.initial_on, "initial_p": d.initial_p,
                     "cost_curve": [[list(b) for b in blocks] for blocks in d.cost_curve],
                     "su_cost": d.su_cost, "sd_cost": d.sd_cost, "on_cost": d.on_cost,
                     "reserve_cost": dict(d.reserve_cost), "reserve_cap": dict(d.reserve_cap)}
                    for d in case.devices],
        "zones": [{"id": z.id, "power_kind": z.power_kind,
                   "requirement": {k: list(v) for k, v in z.requirement.items()},
                   "shortfall_penalty": dict(z.shortfall_penalty)} for z in case.zones],
        "products": [{"id": p.id, "direction": p.direction, "power_kind": p.power_kind,
                      "quality_rank": p.quality_rank} for p in case.products],
        "penalties": {"balance": case.balance_penalty, "line_overload": case.line_overload_penalty},
    }


def case_from_dict(doc: dict, validate: bool = True) -> Case:
    _check_schema(doc, "case")
    buses = [Bus(b["id"], b["v_min"], b["v_max"], b.get("is_reference", False),
                 b.get("active_zone"), b.get("reactive_zone")) for b in doc["buses"]]
    lines = [ACLine(l["id"], l["from_bus"], l["to_bus"], l["g_sr"], l["b_sr"],
                    l.get("g_fr", 0.0), l.get("g_to", 0.0), l.get("b_fr", 0.0),
                    l.get("b_to", 0.0), l.get("b_ch", 0.0), l.get("s_max", 1e3),
                    l.get("status", True)) for l in doc["lines"]]
    devices = [Device(d["id"], d["kind"], d["bus"], d["p_min"], d["p_max"], d["q_min"],
                      d["q_max"], d["p_ru"], d["p_rd"], d["p_ru_su"], d["p_rd_sd"],
                      d["cost_curve"], d.get("initial_on", False), d.get("initial_p", 0.0),
                      d.get("su_cost", 0.0), d.get("sd_cost", 0.0), d.get("on_cost", 0.0),
                      d.get("reserve_cost", {}), d.get("reserve_cap", {})) for d in doc["devices"]]
    zones = [ReserveZone(z["id"], z["power_kind"], z["requirement"], z["shortfall_penalty"])
             for z in doc["zones"]]
    products = [ReserveProduct(p["id"], p["direction"], p["power_kind"], p["quality_rank"])
                for p in doc["products"]]
    pen = doc["penalties"]
    case = Case(TimeGrid(doc["time_grid"]["durations"]), buses, lines, devices, zones, products,
                pen.get("balance", 1e6), pen.get("line_overload", 1e5), doc.get("name", "case"))
    if validate:
        violations = validate_case(case)
        if violations:
            raise CaseValidationError(violations)
    return case


def read_case(data) -> Case:
    """Parse and validate a case file given as bytes or text."""
    return case_from_dict(_parse(data))


def write_case(case: Case) -> bytes:
    return _dump(case_to_dict(case))


# ---------------------------------------------------------------------------
# solutions


def _table(ids, arr) -> dict:
    return {i: [float(x) for x in row] for i, row in zip(ids, np.asarray(arr))}


def solution_to_dict(solution: FullSolution, case: Case) -> dict:
    dev = [d.id for d in case.devices]
    bus = [b.id for b in case.buses]
    line = [l.id for l in case.lines]
    c, x, r = solution.commitment, solution.dispatch, solution.reserves
    ints = lambda a: {i: [int(v) for v in row] for i, row in zip(dev, a)}  # noqa: E731
    return {
        "commitment": {"u_on": ints(c.u_on), "u_su": ints(c.u_su), "u_sd": ints(c.u_sd)},
        "dispatch": {"p": _table(dev, x.p), "q": _table(dev, x.q), "v": _table(bus, x.v),
                     "theta": _table(bus, x.theta), "p_fr": _table(line, x.p_fr),
                     "q_fr": _table(line, x.q_fr), "p_to": _table(line, x.p_to),
                     "q_to": _table(line, x.q_to), "p_mismatch": _table(bus, x.p_mismatch),
                     "q_mismatch": _table(bus, x.q_mismatch)},
        "reserves": {
            "r": {d: _table([p.id for p in case.products], r.r[j]) for j, d in enumerate(dev)},
            "shortfall": {z.id: _table([p.id for p in case.products], r.shortfall[n])
                          for n, z in enumerate(case.zones)},
        },
        "meta": _jsonable(solution.meta),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _read_table(doc: dict, ids, T: int, where: str, default=None) -> np.ndarray:
    if doc is None:
        if default is None:
            raise SchemaError(where, "missing table")
        return np.full((len(ids), T), default, dtype=float)
    extra = set(doc) - set(ids)
    if extra:
        raise DimensionError(f"{where}: unknown ids {sorted(extra)[:5]}")
    out = np.zeros((len(ids), T))
    for n, i in enumerate(ids):
        if i not in doc:
            raise DimensionError(f"{where}: missing entry for {i!r}")
        row = doc[i]
        if len(row) != T:
            raise DimensionError(f"{where}.{i}: {len(row)} periods, case has {T}")
        out[n] = row
    return out


def solution_from_dict(doc: dict, case: Case) -> FullSolution:
    _check_schema(doc, "solution")
    T = case.T
    dev = [d.id for d in case.devices]
    bus = [b.id for b in case.buses]
    line = [l.id for l in case.lines]
    prods = [p.id for p in case.products]
    com = doc["commitment"]
    commitment = CommitmentSchedule(
        *(_read_table(com[k], dev, T, f"commitment.{k}").astype(np.int8)
          for k in ("u_on", "u_su", "u_sd")))
    dp = doc["dispatch"]
    fields = {}
    for k, ids, default in (("p", dev, None), ("q", dev, None), ("v", bus, None),
                            ("theta", bus, None), ("p_fr", line, 0.0), ("q_fr", line, 0.0),
                            ("p_to", line, 0.0), ("q_to", line, 0.0),
                            ("p_mismatch", bus, 0.0), ("q_mismatch", bus, 0.0)):
        fields[k] = _read_table(dp.get(k), ids, T, f"dispatch.{k}", default)
    dispatch = DispatchState(**fields)

    rs = doc["reserves"]
    r = np.zeros((len(dev), len(prods), T))
    for j, d in enumerate(dev):
        if d in rs["r"]:
            r[j] = _read_table(rs["r"][d], prods, T, f"reserves.r.{d}", 0.0) if rs["r"][d] else 0.0
    if set(rs["r"]) - set(dev):
        raise DimensionError(f"reserves.r: unknown devices {sorted(set(rs['r']) - set(dev))[:5]}")
    s = np.zeros((len(case.zones), len(prods), T))
    for n, z in enumerate(case.zones):
        if z.id in rs["shortfall"]:
            s[n] = _read_table(rs["shortfall"][z.id], prods, T, f"reserves.shortfall.{z.id}", 0.0)
    violations = []
    if np.any(r < 0):
        j, k, t = np.argwhere(r < 0)[0]
        violations.append(Violation("reserve", dev[j], f"negative reserve for {prods[k]!r}", int(t)))
    if np.any(s < 0):
        n, k, t = np.argwhere(s < 0)[0]
        violations.append(Violation("reserve", case.zones[n].id, f"negative shortfall for {prods[k]!r}", int(t)))
    for name in ("u_on", "u_su", "u_sd"):
        arr = getattr(commitment, name)
        if np.any((arr != 0) & (arr != 1)):
            violations.append(Violation("commitment", name, "entries must be 0 or 1"))
    if violations:
        raise CaseValidationError(violations)
    return FullSolution(commitment, dispatch, ReserveState(r, s), dict(doc.get("meta", {})))


def read_solution(data, case: Case) -> FullSolution:
    """Parse a solution file and check it against ``case``."""
    return solution_from_dict(_parse(data), case)


def write_solution(solution: FullSolution, case: Case) -> bytes:
    return _dump(solution_to_dict(solution, case))


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GeneratorSpec:
    n_buses: int
    n_devices: int
    n_periods: int = 48
    n_active_zones: int = 1
    n_reactive_zones: int = 1
    seed: int = 0
    load_profile_shape: str = "diurnal"
    capacity_margin: float = 0.3
    ramp_tightness: float = 0.8
    n_lines: int | None = None
    reserve_fraction: float = 0.03
    producer_fraction: float = 0.45
    period_duration: float = 1.0

    def __post_init__(self):
        if self.n_buses < 2 or self.n_devices < 2 or self.n_periods < 1:
            raise ValueError("need n_buses >= 2, n_devices >= 2 and n_periods >= 1")
        if self.load_profile_shape not in ("flat", "diurnal"):
            raise ValueError(f"unknown load profile {self.load_profile_shape!r}")
        if not 0 < self.ramp_tightness <= 1:
            raise ValueError("ramp_tightness must lie in (0, 1]")
        if self.capacity_margin < 0:
            raise ValueError("capacity_margin must be non-negative")
        if not 1 <= self.n_active_zones <= self.n_buses or not 1 <= self.n_reactive_zones <= self.n_buses:
            raise ValueError("zone counts must lie between 1 and n_buses")
        if self.n_lines is not None and self.n_lines < self.n_buses - 1:
            raise ValueError("too few lines for a connected network")


# sized after published benchmark networks: buses, devices, lines, active zones, reactive zones
PRESETS = {
    "goc73": dict(n_buses=73, n_devices=208, n_lines=127, n_active_zones=1, n_reactive_zones=1),
    "goc617": dict(n_buses=617, n_devices=499, n_lines=723, n_active_zones=10, n_reactive_zones=10),
    "goc2000": dict(n_buses=2000, n_devices=1894, n_lines=2345, n_active_zones=4, n_reactive_zones=10),
}


def preset_spec(name: str, **overrides) -> GeneratorSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return GeneratorSpec(**{**PRESETS[name], **overrides})


def _network(rng, n: int, n_lines: int):
    """Random geometric network: a nearest-neighbour tree plus short extra edges."""
    xy = rng.random((n, 2))
    edges = []
    for i in range(1, n):
        dist = np.hypot(*(xy[:i] - xy[i]).T)
        k = min(i, 3)
        near = np.argsort(dist, kind="stable")[:k]
        edges.append((int(near[rng.integers(k)]), i))
    present = {tuple(sorted(e)) for e in edges}
    tries = 0
    while len(edges) < n_lines and tries < 50 * n_lines:
        tries += 1
        i = int(rng.integers(n))
        dist = np.hypot(*(xy - xy[i]).T)
        near = np.argsort(dist, kind="stable")[1:min(n, 7)]
        jj = int(near[rng.integers(len(near))])
        e = tuple(sorted((i, jj)))
        if e in present:
            continue
        present.add(e)
        edges.append(e)
    return xy, edges


def _dc_flows(n: int, edges, x, inj: np.ndarray) -> np.ndarray:
    """DC power-flow line flows for injections ``inj`` (buses x periods), bus 0 as reference."""
    B = np.zeros((n, n))
    for (f, t), xl in zip(edges, x):
        b = 1.0 / xl
        B[f, f] += b
        B[t, t] += b
        B[f, t] -= b
        B[t, f] -= b
    theta = np.zeros_like(inj)
    theta[1:] = np.linalg.solve(B[1:, 1:], inj[1:])
    return np.array([(theta[f] - theta[t]) / xl for (f, t), xl in zip(edges, x)])


def generate_case(spec: GeneratorSpec) -> Case:
    """Build a random case that provably admits an all-on feasible dispatch.

    The witness dispatches every producer at the same fraction of its capacity
    and every consumer at its nominal demand; ramp rates and initial states are
    derived from it, and it is re-checked before the case is returned.
    """
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_buses, spec.n_periods
    d = spec.period_duration
    n_lines = spec.n_lines if spec.n_lines is not None else int(round(1.4 * n))
    xy, edges = _network(rng, n, max(n_lines, n - 1))

    x = rng.uniform(0.03, 0.12, len(edges))
    r = x * rng.uniform(0.1, 0.3, len(edges))
    y = 1.0 / (r + 1j * x)
    b_ch = rng.uniform(0.0, 0.04, len(edges))

    n_prod = int(np.clip(round(spec.producer_fraction * spec.n_devices), 1, spec.n_devices - 1))
    n_cons = spec.n_devices - n_prod
    prod_bus = rng.integers(n, size=n_prod)
    cons_bus = rng.integers(n, size=n_cons)

    hours = np.arange(T) * d
    if spec.load_profile_shape == "diurnal":
        profile = 1.0 + 0.2 * np.sin(2 * np.pi * (hours - 9.0) / 24.0)
    else:
        profile = np.ones(T)
    base = rng.uniform(0.2, 1.2, n_cons)
    wiggle = 1.0 + 0.03 * rng.standard_normal((n_cons, T))
    nominal = base[:, None] * profile[None, :] * wiggle
    demand = nominal.sum(axis=0)
    peak = demand.max()

    weights = rng.uniform(0.5, 2.0, n_prod)
    p_max_pr = weights / weights.sum() * (1.0 + spec.capacity_margin) * 1.05 * peak
    alpha = demand / p_max_pr.sum()
    if alpha.max() > 1.0 + 1e-12:
        raise InfeasibleSpecError("producer capacity cannot cover demand")
    min_frac = rng.uniform(0.1, 0.3, n_prod)
    min_frac = np.minimum(min_frac, 0.9 * alpha.min())
    if np.any(min_frac <= 0):
        raise InfeasibleSpecError("capacity margin leaves no room for minimum output")
    p_min_pr = min_frac * p_max_pr
    witness_pr = alpha[None, :] * p_max_pr[:, None]
    step = np.abs(np.diff(witness_pr, axis=1)) / d if T > 1 else np.zeros((n_prod, 0))
    need = step.max(axis=1, initial=0.0)
    tight = spec.ramp_tightness
    ramp = np.maximum(need * 1.001, p_max_pr / d * (1.0 / tight - 1.0))
    ramp = np.maximum(ramp, 1e-3 * p_max_pr)
    ramp_sd = np.maximum(ramp, 1.01 * p_max_pr / d)
    base_rate = rng.uniform(800.0, 3000.0, n_prod)
    on_cost = rng.uniform(0.02, 0.1, n_prod) * base_rate * p_max_pr
    su_cost = rng.uniform(2.0, 6.0, n_prod) * on_cost

    products = default_products()
    rcost_draw = rng.uniform(10.0, 200.0, (spec.n_devices, len(products)))
    rcost_mask = rng.random((spec.n_devices, len(products))) < 0.5

    def reserve_cost(j):
        return {p.id: float(rcost_draw[j, k]) for k, p in enumerate(products)
                if p.power_kind == ACTIVE and rcost_mask[j, k]}

    devices = []
    for j in range(n_prod):
        pm = float(p_max_pr[j])
        blocks = tuple((w * pm, base_rate[j] * m) for w, m in ((0.4, 1.0), (0.3, 1.15), (0.3, 1.35)))
        devices.append(Device(
            f"pr{j}", PRODUCER, f"bus{prod_bus[j]}",
            p_min=[float(p_min_pr[j])] * T, p_max=[pm] * T,
            q_min=[-0.3 * pm] * T, q_max=[0.5 * pm] * T,
            p_ru=float(ramp[j]), p_rd=float(ramp[j]), p_ru_su=float(ramp_sd[j]), p_rd_sd=float(ramp_sd[j]),
            cost_curve=[blocks] * T, initial_on=True, initial_p=float(witness_pr[j, 0]),
            su_cost=float(su_cost[j]), sd_cost=0.0, on_cost=float(on_cost[j]),
            reserve_cost=reserve_cost(j)))
    firm_value = rng.uniform(5000.0, 8000.0, n_cons)
    elastic_value = rng.uniform(2000.0, 3500.0, n_cons)
    lo_frac = rng.uniform(0.8, 0.9, n_cons)
    for c in range(n_cons):
        pmin = lo_frac[c] * nominal[c]
        pmax = 1.1 * nominal[c]
        curve = [((float(pmin[t]), float(firm_value[c])), (float(pmax[t] - pmin[t]), float(elastic_value[c])))
                 for t in range(T)]
        cons_ramp = 2.0 * float(pmax.max()) / d
        devices.append(Device(
            f"cs{c}", CONSUMER, f"bus{cons_bus[c]}",
            p_min=pmin.tolist(), p_max=pmax.tolist(),
            q_min=(0.1 * nominal[c]).tolist(), q_max=(0.4 * nominal[c]).tolist(),
            p_ru=cons_ramp, p_rd=cons_ramp, p_ru_su=cons_ramp, p_rd_sd=cons_ramp,
            cost_curve=curve, initial_on=True, initial_p=float(nominal[c, 0]),
            reserve_cost=reserve_cost(n_prod + c)))

    # zones: contiguous strips along the first coordinate
    order = np.argsort(xy[:, 0], kind="stable")
    a_zone = np.empty(n, dtype=int)
    q_zone = np.empty(n, dtype=int)
    for z, chunk in enumerate(np.array_split(order, spec.n_active_zones)):
        a_zone[chunk] = z
    for z, chunk in enumerate(np.array_split(order, spec.n_reactive_zones)):
        q_zone[chunk] = z

    zones = []
    frac = spec.reserve_fraction
    for z in range(spec.n_active_zones):
        members = a_zone[cons_bus] == z
        zpeak = float(nominal[members].sum(axis=0).max()) if members.any() else 0.0
        req, pen = {}, {}
        for p in products:
            if p.power_kind != ACTIVE:
                continue
            req[p.id] = [frac * zpeak] * T
            pen[p.id] = float(rng.uniform(1.0, 2.0) * 1e4 * (4 - p.quality_rank))
        zones.append(ReserveZone(f"az{z}", ACTIVE, req, pen))
    for z in range(spec.n_reactive_zones):
        members = q_zone[cons_bus] == z
        zpeak = float((0.25 * nominal[members]).sum(axis=0).max()) if members.any() else 0.0
        req = {p.id: [frac * zpeak] * T for p in products if p.power_kind == REACTIVE}
        pen = {p.id: float(rng.uniform(1.0, 2.0) * 1e4) for p in products if p.power_kind == REACTIVE}
        zones.append(ReserveZone(f"qz{z}", REACTIVE, req, pen))

    inj = np.zeros((n, T))
    np.add.at(inj, prod_bus, witness_pr)
    np.add.at(inj, cons_bus, -nominal)
    flows = _dc_flows(n, edges, x, inj)
    s_max = 1.5 * np.abs(flows).max(axis=1) + 0.5

    buses = [Bus(f"bus{i}", 0.9, 1.1, i == 0, f"az{a_zone[i]}", f"qz{q_zone[i]}") for i in range(n)]
    lines = [ACLine(f"line{l}", f"bus{f}", f"bus{t}", float(y[l].real), float(y[l].imag),
                    b_ch=float(b_ch[l]), s_max=float(s_max[l]))
             for l, (f, t) in enumerate(edges)]
    case = Case(TimeGrid((d,) * T), buses, lines, devices, zones, products,
                name=f"gen_n{n}_d{spec.n_devices}_t{T}_s{spec.seed}")
    violations = validate_case(case)
    if violations:
        raise InfeasibleSpecError(f"generated case is invalid: {violations[:3]}")
    _verify_witness(case, witness_pr, nominal)
    return case


def _verify_witness(case: Case, witness_pr: np.ndarray, nominal: np.ndarray) -> None:
    p = np.vstack([witness_pr, nominal])
    tol = 1e-9
    if np.any(p < case.p_min - tol) or np.any(p > case.p_max + tol):
        raise InfeasibleSpecError("witness dispatch violates device limits")
    init = np.array([dev.initial_p for dev in case.devices])
    prev = np.concatenate([init[:, None], p[:, :-1]], axis=1)
    d = case.durations
    ru = np.array([dev.p_ru for dev in case.devices])[:, None]
    rd = np.array([dev.p_rd for dev in case.devices])[:, None]
    if np.any(p - prev > ru * d + tol) or np.any(prev - p > rd * d + tol):
        raise InfeasibleSpecError("witness dispatch violates ramp limits")
    balance = (case.sign[:, None] * p).sum(axis=0)
    if np.any(np.abs(balance) > 1e-8 * max(1.0, np.abs(p).sum())):
        raise InfeasibleSpecError("witness dispatch is not balanced")
