"""Acceptance criteria, one test (and one printed PASS/FAIL line) each.

The PASS/FAIL lines are repeated in the terminal summary. The 160x160 timing
sweep is marked ``slow`` and can be skipped with ``-m "not slow"``.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ACCEPTANCE_LINES, random_spd, rank_k_loads
from ldas.analytical import STATED_COUNTS, run_analytical
from ldas.backends import SymmetricSystem, preprocess
from ldas.bench import BenchConfig, preprocess_share, run_bench
from ldas.core import OrthoBasis, SolveLedger, ldas_solve
from ldas.fem import DensityFilter
from ldas.mma import run
from ldas.responses import (EXPECTED_SOLVES, MODES, ProblemDefinition, evaluate_iteration,
                            response_values)


def report(criterion, ok, detail):
    line = f"[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_analytical_example():
    t0 = time.perf_counter()
    exact = run_analytical(exact=True)
    floating = run_analytical(exact=False)
    elapsed = time.perf_counter() - t0
    ok = (exact.ok and floating.ok and exact.backend_solves == floating.backend_solves == 2
          and exact.max_state_error == 0 and floating.max_state_error <= 1e-12 and elapsed < 1.0)
    assert report(1, ok, f"{exact.backend_solves} solves for {exact.loads_requested} loads, coefficients exact "
                         f"(rational) / within 1e-12 (float), state error {floating.max_state_error:.1e}, "
                         f"{elapsed:.3f} s"), exact.failures + floating.failures


def test_criterion_1_partial_policy_counts():
    # The LDPP+LDAP policy, applied as defined, leaves two mixed adjoint loads unsolved-for
    # and needs 4 solves; the stated 3 is asserted as written.
    counts = run_analytical(exact=True).policy_counts
    ok = counts["none"] == STATED_COUNTS["none"] and counts["ldpp_ldap"] == STATED_COUNTS["ldpp_ldap"]
    assert report("1 (policy counts)", ok, f"none {counts['none']} (stated {STATED_COUNTS['none']}), "
                                           f"LDPP+LDAP {counts['ldpp_ldap']} (stated {STATED_COUNTS['ldpp_ldap']})"), counts


def test_criterion_2_solve_counts():
    problem = ProblemDefinition.default(40)
    s = problem.initial_design()
    t0 = time.perf_counter()
    counts = {m: evaluate_iteration(problem, s, m).ledger.backend_solves for m in MODES}
    elapsed = time.perf_counter() - t0
    others = {}
    for shape in [(4, 4), (9, 6), (16, 25)]:
        p = ProblemDefinition.default(*shape)
        others[shape] = {m: evaluate_iteration(p, p.initial_design(), m, gradients=False).ledger.backend_solves
                         for m in MODES}
    ok = counts == EXPECTED_SOLVES and all(c == EXPECTED_SOLVES for c in others.values()) and elapsed < 10
    assert report(2, ok, f"40x40 counts {counts} in {elapsed:.2f} s; 4x4, 9x6, 16x25 identical: "
                         f"{all(c == EXPECTED_SOLVES for c in others.values())}")


def test_criterion_3_naive_ldas_equivalence():
    problem = ProblemDefinition.default(20)
    s = np.random.default_rng(11).uniform(0.1, 0.9, problem.mesh.nel)
    naive = evaluate_iteration(problem, s, "naive", backend="direct")
    ldas = evaluate_iteration(problem, s, "ldas", backend="direct")
    val_err = np.max(np.abs(ldas.values - naive.values) / np.maximum(np.abs(naive.values), 1e-300))
    scale = np.abs(naive.gradients).max(axis=1)
    grad_err = np.max(np.abs(ldas.gradients - naive.gradients).max(axis=1) / np.where(scale > 0, scale, 1.0))

    traj_naive = run(problem, "naive", max_iters=10, tol_change=0.0)
    traj_ldas = run(problem, "ldas", max_iters=10, tol_change=0.0)
    same_len = len(traj_naive) == len(traj_ldas) == 10
    traj_err = max(np.abs(a.design - b.design).max() for a, b in zip(traj_naive, traj_ldas))
    ok = val_err <= 1e-8 and grad_err <= 1e-8 and same_len and traj_err <= 1e-6
    assert report(3, ok, f"values {val_err:.1e}, gradients {grad_err:.1e} (relative), "
                         f"10-iteration design difference {traj_err:.1e}")


def test_criterion_4_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, bad_counts = 0.0, []
    for trial in range(100):
        n = int(rng.integers(13, 201))
        k = int(rng.integers(1, 13))
        m = int(rng.integers(k, k + 15))
        a = random_spd(n, rng)
        loads = rank_k_loads(n, k, m, rng)
        system = SymmetricSystem.from_matrix(a)
        ledger = SolveLedger()
        states = ldas_solve(system, loads, OrthoBasis(system.version), ledger, preprocess(system, "direct"))
        if ledger.backend_solves != k:
            bad_counts.append((trial, k, ledger.backend_solves))
        oracle = np.linalg.solve(a, np.column_stack(loads))
        for j, u in enumerate(states):
            ref = oracle[:, j]
            worst = max(worst, np.linalg.norm(u - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    ok = not bad_counts and worst <= 1e-8 and elapsed < 30
    assert report(4, ok, f"100 trials, count mismatches {len(bad_counts)}, worst state error {worst:.1e}, "
                         f"{elapsed:.1f} s"), bad_counts


def test_criterion_5_finite_differences():
    problem = ProblemDefinition.default(6)
    rng = np.random.default_rng(5)
    h = 1e-6
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        s = rng.uniform(0.05, 0.95, problem.mesh.nel)
        grads = evaluate_iteration(problem, s, "ldas").gradients
        fd = np.empty_like(grads)
        for e in range(problem.mesh.nel):
            up, dn = s.copy(), s.copy()
            up[e] += h
            dn[e] -= h
            fd[:, e] = (response_values(problem, up) - response_values(problem, dn)) / (2 * h)
        # per response, relative to its largest sensitivity
        err = np.abs(fd - grads).max(axis=1) / np.abs(grads).max(axis=1)
        worst = max(worst, err.max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 60
    assert report(5, ok, f"32 responses x 10 designs, worst relative error {worst:.1e}, {elapsed:.1f} s")


@pytest.mark.slow
def test_criterion_6_runtime_trend(tmp_path):
    t0 = time.perf_counter()
    # direct preprocessing jitter is comparable to the solve-phase gap between modes, and a
    # direct repeat is cheap, so it gets more repeats than CG
    rows = run_bench(BenchConfig(sizes=(160,), backends=("cg",), repeats=3, out=str(tmp_path / "cg.csv")))
    rows += run_bench(BenchConfig(sizes=(160,), backends=("direct",), repeats=5, out=str(tmp_path / "direct.csv")))
    elapsed = time.perf_counter() - t0
    t = {(r.backend, r.mode): r.t_hat for r in rows}
    n = rows[0].n
    share = preprocess_share(rows, n, "direct")
    cg_ok = t["cg", "ldas"] <= 0.35 and t["cg", "ldas"] < t["cg", "ldap"] < 1
    direct_ok = t["direct", "ldas"] >= share and t["direct", "ldas"] < t["direct", "ldap"]
    ok = cg_ok and direct_ok and elapsed < 600 and not any(r.flagged for r in rows)
    detail = (f"n={n}; cg t_hat ldas {t['cg', 'ldas']:.3f} ldap {t['cg', 'ldap']:.3f}; "
              f"direct t_hat ldas {t['direct', 'ldas']:.3f} ldap {t['direct', 'ldap']:.3f} "
              f"preprocess share {share:.3f}; {elapsed:.0f} s")
    assert report(6, ok, detail)


# criterion 7: invariants as property tests; each records its outcome and the last one reports

_invariants = {}


@st.composite
def load_sets(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, 60))
    k = draw(st.integers(1, min(n, 10)))
    m = draw(st.integers(k, k + 8))
    loads = rank_k_loads(n, k, m, rng)
    zeros = draw(st.lists(st.integers(0, m), max_size=3))
    for z in sorted(zeros, reverse=True):
        loads.insert(z, np.zeros(n))
    return random_spd(n, rng), loads, k, len(zeros), rng


@settings(max_examples=60, deadline=None)
@given(load_sets())
def test_criterion_7_invariants_ldas(case):
    a, loads, k, nzero, rng = case
    system = SymmetricSystem.from_matrix(a)
    prepared = preprocess(system, "direct")
    basis, ledger = OrthoBasis(system.version), SolveLedger()
    previous = (0, 0, 0)
    states = []
    for f in loads:
        states.extend(ldas_solve(system, [f], basis, ledger, prepared))
        now = (ledger.loads_requested, ledger.backend_solves, ledger.reconstructions)
        assert ledger.loads_requested == ledger.backend_solves + ledger.reconstructions
        assert all(x >= y for x, y in zip(now, previous))
        previous = now
    _invariants["ledger conservation"] = True

    q = np.array([f / np.linalg.norm(f) for f in basis.loads])
    gram = np.abs(q @ q.T - np.eye(len(q)))
    assert gram.max() <= 1e-10
    _invariants["orthogonality"] = True

    assert ledger.backend_solves == k
    for f, u in zip(loads, states):
        if not f.any():
            assert not u.any()
        assert np.linalg.norm(a @ u - f) <= 1e-8 * max(np.linalg.norm(f), 1e-300)
    zero_ledger = SolveLedger()
    u0 = ldas_solve(system, [np.zeros(a.shape[0])], basis, zero_ledger, prepared)[0]
    assert not u0.any() and zero_ledger.backend_solves == 0
    _invariants["zero load"] = True

    order = rng.permutation(len(loads))
    basis2, ledger2 = OrthoBasis(system.version), SolveLedger()
    permuted = ldas_solve(system, [loads[i] for i in order], basis2, ledger2, prepared)
    assert ledger2.backend_solves == k
    for i, u in zip(order, permuted):
        assert np.linalg.norm(a @ u - loads[i]) <= 1e-8 * max(np.linalg.norm(loads[i]), 1e-300)
    _invariants["order invariance"] = True


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.floats(1.0, 4.0))
def test_criterion_7_invariants_filter(nelx, nely, radius):
    w = DensityFilter(nelx, nely, radius).weights
    assert w.min() >= 0
    np.testing.assert_allclose(np.asarray(w.sum(axis=1)).ravel(), 1.0, rtol=0, atol=1e-14)
    _invariants["filter row-stochastic"] = True


def test_criterion_7_report():
    expected = ["orthogonality", "ledger conservation", "zero load", "order invariance", "filter row-stochastic"]
    ok = all(_invariants.get(name) for name in expected)
    assert report(7, ok, ", ".join(f"{name} {'ok' if _invariants.get(name) else 'not run/failed'}"
                                   for name in expected))
