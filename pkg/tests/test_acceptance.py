"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Cases are generated or hand-built, so these are property checks and
scaled-down analogues rather than reproductions of published numbers.
"""
import os
import time

import numpy as np
import pytest

from acuc.acopf import AcOpfNlp, acopf_derivatives, build_acopf_problem, solve_acopf
from acuc.acopf.flows import branch_flows
from acuc.case_io import GeneratorSpec, generate_case, write_solution
from acuc.evaluator import check_hard, evaluate, gap_percent
from acuc.model import ACTIVE, ACLine
from acuc.orchestrator import RunOptions, run
from acuc.reserves import greedy_allocate, redispatch_reserves, reserve_objective
from acuc.uc import solve_copperplate_uc

from _cases import active_products, consumer, producer, random_interior, two_bus_case, zone
from _oracles import brute_force_uc, complex_oracle

ALGORITHMS = (1, 2, 3, 4)


def verdict(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def _run_all(case, uc, **kw):
    return {a: run(case, RunOptions(algorithm=a, thread_count=1, **kw), uc=uc) for a in ALGORITHMS}


# ---------------------------------------------------------------------------
# shared runs, reused by the evaluator-agreement check

# sizes (buses, devices, periods): mostly small, a few medium, one full-day 100-bus case
LADDER = [(4, 6, 4), (5, 6, 6), (6, 8, 6), (6, 8, 8), (8, 10, 6), (8, 10, 8), (10, 12, 8), (10, 12, 12),
          (12, 14, 12), (14, 16, 12), (16, 18, 12), (20, 20, 12), (20, 24, 24), (25, 25, 24),
          (30, 30, 24), (40, 36, 24), (50, 40, 24), (60, 48, 24), (80, 56, 24), (100, 60, 48)]


@pytest.fixture(scope="module")
def ladder_runs():
    out = []
    for i, (n, m, T) in enumerate(LADDER):
        spec = GeneratorSpec(n, m, T, seed=100 + i, n_active_zones=1 + n // 40, n_reactive_zones=1 + n // 50)
        case = generate_case(spec)
        uc = solve_copperplate_uc(case, include_reserves=True)
        out.append((case, uc, _run_all(case, uc)))
    return out


def failure_mode_case(T=4):
    """Two buses joined by a weak line, with reserve requirements close to the usable headroom.

    Cheap producers sit behind the line and can carry only down reserve; the
    load, a flexible producer and an expensive must-run unit sit at the
    reference bus.  The copper-plate commitment parks all down reserve behind
    the line and all up reserve on the flexible producer.
    """
    no_up = {"reg_up": 0.0, "syn": 0.0, "ramp_up_on": 0.0}
    z = zone("z", ACTIVE, T, {"reg_up": 5.0, "reg_down": 5.0}, {"reg_up": 1000.0, "reg_down": 100.0})
    devs = [producer("g1", "b1", T, 0.0, 4.0, 1.0, reserve_cap={**no_up, "reg_down": 2.5}),
            producer("g2", "b1", T, 0.0, 4.0, 1.0, reserve_cap={**no_up, "reg_down": 2.5}),
            producer("h", "b0", T, 0.0, 10.0, 2.0, reserve_cost={"reg_up": 0.1, "reg_down": 0.5}),
            producer("h2", "b0", T, 0.1, 10.0, 20.0, sd_cost=1e4, reserve_cap=no_up,
                     reserve_cost={"reg_down": 1.0}),
            consumer("c", "b0", T, 9.5, 100.0)]
    return two_bus_case(devs, T, b_sr=-1.6, s_max=3.0, zones=[z], products=active_products(),
                        zone_ids=("z", None))


@pytest.fixture(scope="module")
def failure_runs():
    case = failure_mode_case()
    uc = solve_copperplate_uc(case, include_reserves=True)
    return case, uc, _run_all(case, uc)


@pytest.fixture(scope="module")
def parallel_runs():
    # tiny ramp tightness gives rates far above capacity, so no ramp window binds
    case = generate_case(GeneratorSpec(20, 24, 12, seed=8, ramp_tightness=0.01))
    uc = solve_copperplate_uc(case, include_reserves=True)
    seq = run(case, RunOptions(algorithm=3, thread_count=1), uc=uc)
    par = {k: run(case, RunOptions(algorithm=4, thread_count=k), uc=uc) for k in (1, 2, 8)}
    return case, uc, seq, par


# ---------------------------------------------------------------------------


def test_criterion_01_uc_matches_enumeration(capsys):
    start = time.perf_counter()
    worst, mismatches = 0.0, 0
    for seed in range(50):
        T = 1 + seed % 4
        case = generate_case(GeneratorSpec(2, 2, T, seed=seed))
        got = solve_copperplate_uc(case, include_reserves=False).objective
        ref = brute_force_uc(case)
        err = abs(got - ref) / max(1.0, abs(ref))
        worst = max(worst, err)
        mismatches += err > 1e-6
    elapsed = time.perf_counter() - start
    verdict(capsys, 1, "copper-plate UC vs enumeration", mismatches == 0 and elapsed <= 60.0,
            f"50 cases, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_branch_flows_match_complex_oracle(capsys):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        line = ACLine("l", "a", "b", rng.uniform(0, 5), rng.uniform(-30, 0), rng.uniform(0, 0.1),
                      rng.uniform(0, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0, 0.5))
        v = rng.uniform(0.9, 1.1, 2)
        th = rng.uniform(-0.6, 0.6, 2)
        got = np.array(branch_flows(v[0], v[1], th[0], th[1], line))
        worst = max(worst, np.abs(got - complex_oracle(line, v[0], v[1], th[0], th[1])).max())
    verdict(capsys, 2, "branch flows vs complex admittance", worst <= 1e-12, f"1000 lines, max abs err {worst:.2e}")


def _rel(fd, an):
    return np.abs(fd - an) / np.maximum(1.0, np.abs(an))


def test_criterion_03_derivatives_match_central_differences(capsys):
    # near the cube root of machine epsilon, balancing truncation against roundoff
    worst, h = 0.0, 1e-5
    for point in range(100):
        case = generate_case(GeneratorSpec(6, 6, 1, seed=point // 4))
        prob = build_acopf_problem(case, 0, np.ones(case.n_devices), case.p_min[:, 0], case.p_max[:, 0],
                                   line_limits=bool(point % 2))
        nlp = AcOpfNlp(prob)
        rng = np.random.default_rng(point)
        x = random_interior(nlp, rng)
        grad, jac, hess_vec = acopf_derivatives(prob, x)
        J = jac.toarray()
        lam = rng.normal(size=nlp.m)
        for k in range(nlp.n):
            e = np.zeros(nlp.n)
            e[k] = h
            fd_g = (nlp.objective(x + e) - nlp.objective(x - e)) / (2 * h)
            fd_j = (nlp.constraints(x + e) - nlp.constraints(x - e)) / (2 * h)
            fd_h = (nlp.jacobian(x + e).T @ lam - nlp.jacobian(x - e).T @ lam) / (2 * h)
            worst = max(worst, _rel(fd_g, grad[k]), _rel(fd_j, J[:, k]).max(initial=0.0),
                        _rel(fd_h, hess_vec(lam, e / h)).max(initial=0.0))
    verdict(capsys, 3, "analytic partials vs central differences", worst <= 1e-6,
            f"100 points, worst rel err {worst:.2e}")


def test_criterion_04_opf_termination(capsys):
    ok, iters = 0, []
    for seed in range(100):
        case = generate_case(GeneratorSpec(10, 12, 1, seed=seed))
        prob = build_acopf_problem(case, 0, np.ones(case.n_devices), case.p_min[:, 0], case.p_max[:, 0])
        res = solve_acopf(prob, primal_tol=1e-3, dual_tol=1.0, max_iter=300)
        iters.append(res.iterations)
        ok += res.primal_residual <= 1e-3 and res.dual_residual <= 1.0 and res.iterations <= 300
    verdict(capsys, 4, "AC-OPF termination on 10-bus cases", ok >= 95,
            f"{ok}/100 within tolerances, median {int(np.median(iters))} iterations")


def test_criterion_05_hard_feasibility(capsys, ladder_runs):
    bad = []
    for case, _, runs in ladder_runs:
        for a, (sol, _) in runs.items():
            v = check_hard(case, sol)
            if v:
                bad.append((case.n_buses, case.T, a, v[:3]))
    verdict(capsys, 5, "hard constraints, 20 cases x 4 algorithms", not bad,
            f"{len(ladder_runs) * 4 - len(bad)}/{len(ladder_runs) * 4} clean" + (f", first {bad[0]}" if bad else ""))


def test_criterion_06_reserve_lp_dominates_greedy(capsys, ladder_runs):
    worse, strict = 0, 0
    for case, _, runs in ladder_runs:
        sol, _ = runs[2]
        lp = reserve_objective(case, redispatch_reserves(case, sol.commitment, sol.dispatch))
        greedy = reserve_objective(case, greedy_allocate(case, sol.commitment, sol.dispatch))
        worse += lp > greedy + 1e-6 * max(1.0, abs(greedy))
        priced = any(dev.reserve_cost for dev in case.devices)
        strict += priced and lp < greedy - 1e-6 * max(1.0, abs(greedy))
    verdict(capsys, 6, "reserve LP vs greedy on 20 dispatches", worse == 0 and strict >= 1,
            f"LP worse on {worse}, strictly better on {strict}")


def test_criterion_07_failure_modes(capsys, failure_runs):
    case, _, runs = failure_runs
    rep = {a: evaluate(case, sol) for a, (sol, _) in runs.items()}
    pq = {a: r.p_penalty + r.q_penalty for a, r in rep.items()}
    short = {a: r.shortfall_penalty for a, r in rep.items()}
    ok = pq[1] >= 10 * pq[3] and pq[1] > 0 and short[2] >= 10 * short[3] and short[2] > 0
    verdict(capsys, 7, "failure modes of algorithms 1 and 2", ok,
            f"p/q penalty alg1 {pq[1]:.4g} vs alg3 {pq[3]:.4g}; shortfall alg2 {short[2]:.4g} vs alg3 {short[3]:.4g}")


def test_criterion_08_parallel_consistency(capsys, parallel_runs):
    case, _, (seq, _), par = parallel_runs
    files = {k: write_solution(sol, case) for k, (sol, _) in par.items()}
    identical = files[1] == files[2] == files[8]
    diff = float(np.abs(par[1][0].dispatch.p - seq.dispatch.p).max())
    verdict(capsys, 8, "parallel determinism and agreement", identical and diff <= 1e-6,
            f"threads 1/2/8 identical: {identical}; max |p4 - p3| {diff:.2e} pu")


# the speedup half needs real cores; on smaller machines the check still runs and reports
@pytest.mark.xfail((os.cpu_count() or 1) < 8, reason="thread scaling needs at least 8 CPU cores", strict=False)
def test_criterion_09_scaling(capsys):
    start = time.perf_counter()
    case = generate_case(GeneratorSpec(300, 180, 48, seed=9, n_active_zones=3, n_reactive_zones=4))
    # whole-run times, commitment included: only the OPF stage runs in parallel
    _, s3 = run(case, RunOptions(algorithm=3, thread_count=1))
    t1 = run(case, RunOptions(algorithm=4, thread_count=1))[1].total
    t8 = run(case, RunOptions(algorithm=4, thread_count=8))[1].total
    share = s3.times["opf"] / s3.total
    elapsed = time.perf_counter() - start
    ok = t8 <= t1 / 1.4 and share >= 0.5 and elapsed <= 900.0
    verdict(capsys, 9, "300-bus thread scaling", ok,
            f"alg4 1 thread {t1:.1f}s, 8 threads {t8:.1f}s (speedup {t1 / t8:.2f}); "
            f"alg3 OPF share {share:.0%}; {elapsed:.0f}s on {os.cpu_count()} CPU")


def test_criterion_10_evaluator_agreement(capsys, ladder_runs, failure_runs, parallel_runs):
    runs = [(case, sol, st) for case, _, rs in ladder_runs for sol, st in rs.values()]
    case7, _, rs7 = failure_runs
    runs += [(case7, sol, st) for sol, st in rs7.values()]
    case8, _, seq, par = parallel_runs
    runs += [(case8, *seq)] + [(case8, *r) for r in par.values()]
    worst = max(abs(evaluate(c, sol).objective - st.objective) / max(1.0, abs(st.objective))
                for c, sol, st in runs)
    hand = (gap_percent(100.0, 99.0) == pytest.approx(1.0) and gap_percent(-200.0, -202.0) == pytest.approx(1.0)
            and evaluate(case8, seq[0], reference_objective=seq[1].objective).gap_percent == pytest.approx(0, abs=1e-9))
    verdict(capsys, 10, "evaluator vs solver objectives", worst <= 1e-6 and hand,
            f"{len(runs)} runs, worst rel diff {worst:.2e}; gap hand cases {'ok' if hand else 'wrong'}")
