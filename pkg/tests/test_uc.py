import numpy as np
import pytest

from acuc.case_io import GeneratorSpec, generate_case
from acuc.lp import LpBuilder, solve_lp
from acuc.model import ACTIVE, UP, ReserveProduct, ReserveZone
from acuc.uc import build_pwl_delta, build_uc_mip, pwl_delta_cost, solve_copperplate_uc

from _cases import active_products, consumer, producer, single_bus_case, zone
from _oracles import brute_force_uc, fixed_commitment_value


@pytest.mark.parametrize("curve, p, expected", [
    ([(10.0, 5.0)], 4.0, 20.0),
    ([(5.0, 1.0), (5.0, 3.0)], 7.0, 11.0),
    ([(5.0, 1.0), (5.0, 3.0)], 0.0, 0.0),
])
def test_pwl_delta_cost(curve, p, expected):
    assert pwl_delta_cost(curve, p) == pytest.approx(expected)


def test_pwl_delta_epigraph_lp_fills_cheap_blocks_first():
    b = LpBuilder()
    p = b.add_vars(1, 7.0, 7.0, 0.0, "p")
    build_pwl_delta(b, [(5.0, 1.0), (5.0, 3.0)], weight=1.0, p_var=int(p[0]))
    sol = solve_lp(b.build())
    assert sol.objective == pytest.approx(11.0)


def test_structure_one_producer_one_consumer():
    case = single_bus_case([producer("g", "b0", 1, 0.0, 2.0, 1.0), consumer("c", "b0", 1, 0.5, 10.0)], 1)
    model = build_uc_mip(case, include_reserves=False, include_reactive=False)
    # on, start-up and shut-down indicators for each device and period
    assert model.problem.binary.sum() == 3 * case.n_devices * case.T
    lp = model.problem.lp
    rows = [i for i, name in enumerate(lp.row_names) if name == "p_balance"]
    assert len(rows) == 1
    A = lp.A.toarray()[rows[0]]
    p = model.index["p"][:, 0]
    assert A[p].tolist() == [1.0, -1.0]


def test_cascade_rows_per_zone_product_period():
    T = 3
    zones = [ReserveZone(z, ACTIVE, {"reg_up": [0.1] * T, "syn": [0.1] * T}, {"reg_up": 1e3, "syn": 1e3})
             for z in ("z0", "z1")]
    products = (ReserveProduct("reg_up", UP, ACTIVE, 1), ReserveProduct("syn", UP, ACTIVE, 2))
    case = single_bus_case([producer("g", "b0", T, 0.0, 2.0, 1.0), consumer("c", "b0", T, 0.5, 10.0)], T,
                           zones=zones, products=products, zone_ids=("z0", None))
    model = build_uc_mip(case, include_reserves=True, include_reactive=False)
    assert model.problem.lp.row_names.count("cascade") == 2 * 2 * T


def test_requirement_above_headroom_leaves_deficit_as_shortfall():
    T = 1
    # penalty kept below the consumer's value so serving it stays worthwhile
    z = zone("z", ACTIVE, T, {"reg_up": 1.0}, {"reg_up": 10.0})
    case = single_bus_case([producer("g", "b0", T, 0.0, 1.0, 1.0), consumer("c", "b0", T, 0.6, 100.0)], T,
                           zones=[z], products=active_products()[:1], zone_ids=("z", None))
    res = solve_copperplate_uc(case, include_reserves=True, include_reactive=False)
    assert res.commitment.u_on[:, 0].tolist() == [1, 1]
    # producer must serve 0.6 of its 1.0, so only 0.4 is left for reserve
    assert res.reserves.r[0, 0, 0] == pytest.approx(0.4, abs=1e-7)
    assert res.reserves.shortfall[0, 0, 0] == pytest.approx(0.6, abs=1e-7)


def test_demand_below_minimum_output():
    # demand 0.5 sits below the producer's minimum of 1.0: staying off and paying
    # the mismatch beats running, since value cannot cover the forced surplus
    T = 1
    case = single_bus_case([producer("g", "b0", T, 1.0, 2.0, 1.0, initial_on=False),
                            consumer("c", "b0", T, 0.5, 10.0)], T, balance_penalty=1.0)
    res = solve_copperplate_uc(case, include_reserves=False, include_reactive=False)
    ref = brute_force_uc(case, include_reactive=False)
    assert res.objective == pytest.approx(ref, rel=1e-9)
    assert res.commitment.u_on[0, 0] == 0


def test_identical_periods_give_constant_commitment():
    T = 2
    case = single_bus_case([producer("g", "b0", T, 0.2, 2.0, 1.0, on_cost=0.1, initial_on=False, su_cost=0.5),
                            consumer("c", "b0", T, 1.0, 10.0)], T)
    res = solve_copperplate_uc(case, include_reserves=False)
    assert res.commitment.u_on[0].tolist() == [1, 1]
    assert res.objective == pytest.approx(brute_force_uc(case), rel=1e-9)


def test_reserves_with_zero_requirements_change_nothing():
    case = generate_case(GeneratorSpec(4, 4, 3, seed=1, reserve_fraction=0.0))
    a = solve_copperplate_uc(case, include_reserves=False)
    b = solve_copperplate_uc(case, include_reserves=True)
    assert a.objective == pytest.approx(b.objective, rel=1e-6)


@pytest.mark.parametrize("seed", range(8))
def test_matches_enumeration_on_generated_cases(seed):
    case = generate_case(GeneratorSpec(2, 2, 3, seed=seed))
    res = solve_copperplate_uc(case, include_reserves=False)
    assert res.objective == pytest.approx(brute_force_uc(case), rel=1e-6)


def test_result_satisfies_fixed_commitment_optimality():
    case = generate_case(GeneratorSpec(4, 5, 4, seed=3))
    res = solve_copperplate_uc(case, include_reserves=False)
    assert res.objective == pytest.approx(fixed_commitment_value(case, res.commitment.u_on), rel=1e-6)
    assert np.all(res.p <= case.p_max * res.commitment.u_on + 1e-9)


def test_backends_agree_with_mixed_cost_scales():
    # 1e6 balance penalties next to unit energy rates and 1e3 reactive bounds
    T = 2
    devs = [producer("g1", "b0", T, 0.0, 4.0, 1.0), producer("g2", "b0", T, 0.0, 4.0, 1.0),
            producer("h", "b0", T, 0.0, 10.0, 2.0), producer("h2", "b0", T, 0.1, 10.0, 20.0, sd_cost=1e4),
            consumer("c", "b0", T, 9.5, 100.0)]
    case = single_bus_case(devs, T)
    a = solve_copperplate_uc(case, include_reserves=False, backend="bnb")
    b = solve_copperplate_uc(case, include_reserves=False, backend="highs")
    ref = fixed_commitment_value(case, np.ones((case.n_devices, T)))
    assert a.objective == pytest.approx(b.objective, rel=1e-9) == pytest.approx(ref, rel=1e-9)
