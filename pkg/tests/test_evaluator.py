import numpy as np
import pytest

from acuc.case_io import DimensionError, GeneratorSpec, generate_case
from acuc.evaluator import check_hard, evaluate, gap_percent
from acuc.model import CommitmentSchedule, DispatchState, FullSolution, ReserveState, cascade_shortfall
from acuc.orchestrator import RunOptions, run
from acuc.uc import solve_copperplate_uc

from _cases import consumer, producer, single_bus_case


def _solution(case, u_on, p):
    c = CommitmentSchedule.from_on(case, np.asarray(u_on))
    dsp = DispatchState.empty(case)
    dsp.p[:] = p
    return FullSolution(c, dsp, ReserveState.zeros(case))


def test_producers_off_against_fixed_demand():
    T, demand, value = 2, 0.7, 30.0
    durations = (1.0, 0.5)
    case = single_bus_case([producer("g", "b0", T, 0.0, 2.0, 1.0), consumer("c", "b0", T, demand, value)], T,
                           durations=durations)
    rep = evaluate(case, _solution(case, [[0, 0], [1, 1]], [[0.0, 0.0], [demand, demand]]))
    p_pen = 1e6 * demand * sum(durations)
    assert rep.p_penalty == pytest.approx(p_pen, rel=1e-12)
    assert rep.energy_value == pytest.approx(value * demand * sum(durations))
    assert rep.objective == pytest.approx(rep.energy_value - p_pen, rel=1e-12)
    assert rep.max_p_mismatch == pytest.approx(demand)


def test_served_demand_has_no_penalty():
    case = single_bus_case([producer("g", "b0", 1, 0.0, 2.0, 4.0), consumer("c", "b0", 1, 0.7, 30.0)], 1)
    rep = evaluate(case, _solution(case, [[1], [1]], [[0.7], [0.7]]))
    assert rep.p_penalty == 0.0
    assert rep.objective == pytest.approx(0.7 * (30.0 - 4.0))
    assert rep.feasible


@pytest.mark.parametrize("seed", range(3))
def test_copper_plate_replay_matches_commitment_objective(seed):
    case = generate_case(GeneratorSpec(5, 6, 4, seed=seed))
    uc = solve_copperplate_uc(case, include_reserves=True)
    dsp = DispatchState.empty(case)
    dsp.p[:], dsp.q[:] = uc.p, uc.q
    sol = FullSolution(uc.commitment, dsp, uc.reserves)
    rep = evaluate(case, sol, copper_plate=True)
    assert rep.objective == pytest.approx(-uc.objective, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("ref, obj, expected", [(100.0, 99.0, 1.0), (100.0, 100.0, 0.0), (-200.0, -202.0, 1.0)])
def test_gap(ref, obj, expected):
    assert gap_percent(ref, obj) == pytest.approx(expected)


def test_gap_needs_nonzero_reference():
    with pytest.raises(ValueError):
        gap_percent(0.0, 1.0)


@pytest.fixture(scope="module")
def solved():
    case = generate_case(GeneratorSpec(6, 8, 4, seed=21))
    sol, stats = run(case, RunOptions(algorithm=3, thread_count=1))
    return case, sol, stats


def test_solver_and_evaluator_agree(solved):
    case, sol, stats = solved
    rep = evaluate(case, sol, reference_objective=stats.objective)
    assert rep.objective == pytest.approx(stats.objective, rel=1e-6)
    assert rep.gap_percent == pytest.approx(0.0, abs=1e-6)
    assert rep.violations == []


def test_corrupted_start_up_flag_is_one_violation(solved):
    case, sol, _ = solved
    bad = FullSolution(sol.commitment.copy(), sol.dispatch, sol.reserves)
    j = 0
    bad.commitment.u_su[j, 1] = 1 - bad.commitment.u_su[j, 1]
    bad.commitment.u_sd[j, 1] = 0
    v = check_hard(case, bad)
    assert v == [f"transition {case.devices[j].id} t=1"]


def test_power_above_bound_is_one_violation(solved):
    case, sol, _ = solved
    j = int(np.flatnonzero(sol.commitment.u_on[:, 0])[0])
    dsp = DispatchState(**{k: np.array(v, copy=True) for k, v in vars(sol.dispatch).items()})
    dsp.p[j, 0] = case.p_max[j, 0] + 1e-3
    zero = ReserveState.zeros(case)
    v = check_hard(case, FullSolution(sol.commitment, dsp, zero))
    assert f"semicontinuity p {case.devices[j].id} t=0" in v
    assert [m for m in v if m.startswith("semicontinuity")] == [f"semicontinuity p {case.devices[j].id} t=0"]


def test_stored_flows_are_not_trusted(solved):
    case, sol, _ = solved
    dsp = DispatchState(**{k: np.array(v, copy=True) for k, v in vars(sol.dispatch).items()})
    dsp.p_fr[:] = 0.0
    dsp.p_mismatch[:] = 0.0
    a = evaluate(case, sol)
    b = evaluate(case, FullSolution(sol.commitment, dsp, sol.reserves))
    assert a.objective == b.objective


def test_shortfall_penalty_from_recomputed_cascade(solved):
    case, sol, _ = solved
    res = ReserveState(sol.reserves.r.copy(), np.zeros_like(sol.reserves.shortfall))
    rep = evaluate(case, FullSolution(sol.commitment, sol.dispatch, res))
    short = cascade_shortfall(case, res.r)
    expected = sum(z.shortfall_penalty.get(p.id, 0.0) * float(short[n, k] @ case.durations)
                   for n, z in enumerate(case.zones) for k, p in enumerate(case.products))
    assert rep.shortfall_penalty == pytest.approx(expected)


def test_wrong_shape_raises(solved):
    case, sol, _ = solved
    dsp = DispatchState(**{k: np.array(v, copy=True) for k, v in vars(sol.dispatch).items()})
    dsp.p = dsp.p[:, :-1]
    with pytest.raises(DimensionError):
        evaluate(case, FullSolution(sol.commitment, dsp, sol.reserves))


def test_report_formats(solved):
    case, sol, stats = solved
    rep = evaluate(case, sol, reference_objective=stats.objective)
    assert rep.to_csv().splitlines()[0].startswith("objective,")
    assert "p-penalty" in rep.summary() and "not scored" in rep.summary()
    assert '"objective"' in rep.to_json()
