import numpy as np
import pytest

from acuc.acopf.flows import (LineArrays, balance_residual, branch_flows, flow_coefficients, flow_derivatives,
                              line_flows)
from acuc.model import ACLine

from _cases import consumer, producer, single_bus_case, two_bus_case
from _oracles import complex_oracle, two_bus_oracle


def test_example_line_matches_oracle():
    line = ACLine("l", "a", "b", 1.0, -5.0)
    got = branch_flows(1.02, 0.98, 0.1, 0.0, line)
    assert np.allclose(got, complex_oracle(line, 1.02, 0.98, 0.1, 0.0), atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_random_lines_match_oracle(seed):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        line = ACLine("l", "a", "b", rng.uniform(0, 5), rng.uniform(-30, 0), rng.uniform(0, 0.1),
                      rng.uniform(0, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0, 0.5))
        v = rng.uniform(0.9, 1.1, 2)
        th = rng.uniform(-0.5, 0.5, 2)
        got = branch_flows(v[0], v[1], th[0], th[1], line)
        assert np.allclose(got, complex_oracle(line, v[0], v[1], th[0], th[1]), atol=1e-12, rtol=0)


def test_offline_line_carries_nothing():
    line = ACLine("l", "a", "b", 1.0, -5.0, b_ch=0.2)
    assert branch_flows(1.05, 0.95, 0.2, -0.1, line, u_on=0.0) == (0.0, 0.0, 0.0, 0.0)


def test_shunt_free_line_at_identical_terminals():
    line = ACLine("l", "a", "b", 2.0, -8.0)
    assert np.allclose(branch_flows(1.0, 1.0, 0.3, 0.3, line), 0.0, atol=1e-15)


def test_angle_derivative_at_flat_start():
    line = ACLine("l", "a", "b", 1.3, -7.0)
    _, grad, _ = flow_derivatives(flow_coefficients(line), np.ones(1), np.ones(1), np.zeros(1))
    assert grad[0, 0, 0] == pytest.approx(-line.b_sr)


@pytest.mark.parametrize("seed", range(3))
def test_derivatives_by_central_differences(seed):
    rng = np.random.default_rng(seed)
    L = 20
    la = LineArrays(*(rng.uniform(lo, hi, L) for lo, hi in
                      [(0, 3), (-20, -1), (0, .1), (0, .1), (-.1, .1), (-.1, .1), (0, .3)]))
    coef = flow_coefficients(la)
    z = np.stack([rng.uniform(-0.4, 0.4, L), rng.uniform(-0.4, 0.4, L),
                  rng.uniform(0.9, 1.1, L), rng.uniform(0.9, 1.1, L)], axis=1)

    def evaluate(zz):
        return flow_derivatives(coef, zz[:, 2], zz[:, 3], zz[:, 0] - zz[:, 1])

    val, grad, hess = evaluate(z)
    h = 1e-6
    for k in range(4):
        e = np.zeros_like(z)
        e[:, k] = h
        vp, gp, _ = evaluate(z + e)
        vm, gm, _ = evaluate(z - e)
        assert np.allclose((vp - vm) / (2 * h), grad[..., k], rtol=1e-6, atol=1e-7)
        assert np.allclose((gp - gm) / (2 * h), hess[..., k], rtol=1e-6, atol=1e-7)


def test_isolated_bus_residual():
    case = single_bus_case([producer("g", "b0", 1, 0.0, 1.0, 1.0)], 1)
    dp, dq = balance_residual(case, np.array([0.5]), np.array([0.0]), *[np.zeros(0)] * 4)
    assert dp.tolist() == [0.5] and dq.tolist() == [0.0]


def test_all_off_residual_is_zero():
    case = two_bus_case([producer("g", "b0", 1, 0.0, 1.0, 1.0), consumer("c", "b1", 1, 0.5, 10.0)], 1)
    flows = line_flows(case, np.ones(2), np.zeros(2))
    dp, dq = balance_residual(case, np.zeros(2), np.zeros(2), *flows)
    assert np.all(dp == 0) and np.all(dq == 0)


def test_two_bus_exchange_balances():
    load, b_sr = 0.9, -10.0
    case = two_bus_case([producer("g", "b0", 1, 0.0, 2.0, 1.0), consumer("c", "b1", 1, load, 10.0)], 1,
                        b_sr=b_sr)
    delta, v2 = two_bus_oracle(1.0, load, b_sr)
    v, theta = np.array([1.0, v2]), np.array([0.0, -delta])
    line = case.lines[0]
    p_fr, q_fr, _, _ = complex_oracle(line, 1.0, v2, 0.0, -delta)
    flows = line_flows(case, v, theta)
    dp, dq = balance_residual(case, np.array([p_fr, load]), np.array([q_fr, 0.0]), *flows)
    assert np.abs(dp).max() < 1e-12 and np.abs(dq).max() < 1e-12
    assert p_fr == pytest.approx(load, abs=1e-12)


def test_line_flows_vectorized_over_periods():
    case = two_bus_case([producer("g", "b0", 1, 0.0, 2.0, 1.0)], 1)
    v = np.array([[1.0, 1.02], [0.97, 0.99]])
    th = np.array([[0.0, 0.0], [-0.05, 0.02]])
    both = line_flows(case, v, th)
    for t in range(2):
        single = line_flows(case, v[:, t], th[:, t])
        for a, b in zip(both, single):
            assert np.array_equal(a[:, t], b)
