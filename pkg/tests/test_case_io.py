import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acuc.case_io import (CaseValidationError, DimensionError, GeneratorSpec, SchemaError, case_to_dict,
                          generate_case, preset_spec, read_case, read_solution, write_case, write_solution)
from acuc.lp import OPTIMAL, solve_lp
from acuc.model import CommitmentSchedule, DispatchState, FullSolution, ReserveState, validate_case
from acuc.orchestrator import RunOptions, run
from acuc.uc import build_uc_mip


@pytest.fixture(scope="module")
def small_case():
    return generate_case(GeneratorSpec(5, 6, 4, seed=2))


def test_case_round_trip(small_case):
    data = write_case(small_case)
    again = read_case(data)
    assert again == small_case
    assert write_case(again) == data


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(1, 5), st.integers(0, 10_000))
def test_round_trip_generated(n, m, T, seed):
    case = generate_case(GeneratorSpec(n, m, T, seed=seed))
    assert read_case(write_case(case)) == case


def test_missing_durations_reports_path(small_case):
    doc = case_to_dict(small_case)
    del doc["time_grid"]["durations"]
    with pytest.raises(SchemaError) as err:
        read_case(json.dumps(doc))
    assert err.value.path == "time_grid.durations"


def test_duplicate_device_id_is_named(small_case):
    doc = case_to_dict(small_case)
    doc["devices"][1]["id"] = doc["devices"][0]["id"]
    with pytest.raises(CaseValidationError) as err:
        read_case(json.dumps(doc))
    assert doc["devices"][0]["id"] in str(err.value)


def test_invalid_json():
    with pytest.raises(SchemaError):
        read_case(b"{not json")


@pytest.fixture(scope="module")
def solved(small_case):
    sol, _ = run(small_case, RunOptions(algorithm=3, thread_count=1))
    return sol


def test_solution_round_trip(small_case, solved):
    data = write_solution(solved, small_case)
    back = read_solution(data, small_case)
    for name in ("u_on", "u_su", "u_sd"):
        assert np.array_equal(getattr(back.commitment, name), getattr(solved.commitment, name))
    for name in ("p", "q", "v", "theta", "p_fr", "q_to", "p_mismatch"):
        assert np.array_equal(getattr(back.dispatch, name), getattr(solved.dispatch, name))
    assert np.array_equal(back.reserves.r, solved.reserves.r)
    assert write_solution(back, small_case) == data


def _edit(data: bytes, fn) -> bytes:
    doc = json.loads(data)
    fn(doc)
    return json.dumps(doc).encode()


def test_solution_with_missing_period(small_case, solved):
    def drop(doc):
        for dev, series in doc["dispatch"]["p"].items():
            series.pop()
    with pytest.raises(DimensionError):
        read_solution(_edit(write_solution(solved, small_case), drop), small_case)


def test_negative_reserve_rejected(small_case, solved):
    def neg(doc):
        dev = next(iter(doc["reserves"]["r"]))
        prod = next(iter(doc["reserves"]["r"][dev]))
        doc["reserves"]["r"][dev][prod][0] = -0.5
    with pytest.raises(CaseValidationError):
        read_solution(_edit(write_solution(solved, small_case), neg), small_case)


def test_unknown_device_in_solution(small_case, solved):
    def rename(doc):
        doc["dispatch"]["p"]["ghost"] = doc["dispatch"]["p"].pop(small_case.devices[0].id)
    with pytest.raises(DimensionError):
        read_solution(_edit(write_solution(solved, small_case), rename), small_case)


def test_goc73_preset_counts():
    spec = preset_spec("goc73", seed=1, n_periods=2)
    case = generate_case(spec)
    assert (case.n_buses, case.n_devices, case.n_lines) == (73, 208, 127)


def test_generator_is_deterministic():
    spec = GeneratorSpec(12, 10, 6, seed=7)
    assert write_case(generate_case(spec)) == write_case(generate_case(spec))
    assert write_case(generate_case(GeneratorSpec(12, 10, 6, seed=8))) != write_case(generate_case(spec))


@pytest.mark.parametrize("seed", range(5))
def test_tiny_generated_case_balances_all_on(seed):
    case = generate_case(GeneratorSpec(3, 2, 4, seed=seed))
    assert validate_case(case) == []
    model = build_uc_mip(case, include_reserves=False, include_reactive=False)
    lp = model.problem.lp
    lo, hi = lp.lo.copy(), lp.hi.copy()
    u = model.index["u_on"].ravel()
    lo[u] = hi[u] = 1.0
    for name in ("u_su", "u_sd"):
        cols = model.index[name].ravel()
        lo[cols] = hi[cols] = 0.0
    sol = solve_lp(lp.with_bounds(lo, hi), method="highs")
    assert sol.status == OPTIMAL
    slack = np.concatenate([sol.x[model.index["p_slack_plus"]], sol.x[model.index["p_slack_minus"]]])
    assert np.abs(slack).max() < 1e-9


@pytest.mark.parametrize("kwargs", [dict(n_buses=1, n_devices=3), dict(n_buses=3, n_devices=3, ramp_tightness=0.0),
                                    dict(n_buses=3, n_devices=3, load_profile_shape="weekly")])
def test_generator_spec_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        GeneratorSpec(**kwargs)


def test_empty_solution_has_right_shapes(small_case):
    off = CommitmentSchedule.from_on(small_case, np.zeros((small_case.n_devices, small_case.T)))
    sol = FullSolution(off, DispatchState.empty(small_case), ReserveState.zeros(small_case))
    back = read_solution(write_solution(sol, small_case), small_case)
    assert back.dispatch.p.shape == (small_case.n_devices, small_case.T)
