"""Acceptance criteria 1 to 10.

Each test prints one line ``criterion NN: PASS/FAIL ...`` through the
``report`` fixture; the lines are collected again in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from almostqudit.moments import build_moment_problem, build_monomial_list, symmetrize
from almostqudit.opalg import SUBSPACE, evaluate, measurement, state, trace_word
from almostqudit.scenarios import (BIGRAC_LEVEL, CERT_QUATERNARY, RAC_QUBIT, Scenario, Witness, cert_scenario,
                                   cert_symmetry, cert_ternary_bound, guessing_probability, guessing_sdp,
                                   hierarchy_bound, measurement_cert_witness, perturbative_randomness,
                                   rac_epsilon_analytic, rac_scenario, rac_symmetry, rac_witness,
                                   ternary_cert_witnesses)
from almostqudit.sdp import SolverSettings, export_sdpa, import_sdpa, solve
from almostqudit.seesaw import (behavior_of, guess_witness, projector, random_model,
                                random_projective_measurement, seesaw_constrained, seesaw_maximize)

EXTENDED = "2+RVM+VRM+RMV"
TIGHT = SolverSettings(gap_tol=1e-10)


def randomness_lower(epsilon, observed=RAC_QUBIT):
    return guessing_probability(rac_scenario(epsilon=epsilon), rac_witness(), observed).randomness


def test_criterion_01_qubit_rac(report):
    start = time.perf_counter()
    res = hierarchy_bound(rac_scenario(), rac_witness(), 2)
    elapsed = time.perf_counter() - start
    err = abs(res.value - RAC_QUBIT)
    report(1, err <= 1e-6 and elapsed < 10,
           f"bound {res.value:.9f}, |error| {err:.1e} (tol 1e-6), {elapsed:.2f} s (limit 10 s)")


def test_criterion_02_randomness_at_optimum(report):
    details, ok = [], True
    for eps, target, tol in [(0.0, 0.228, 0.005), (1e-3, 0.152, 0.01)]:
        sc = rac_scenario(epsilon=eps)
        r_hier = randomness_lower(eps)
        ss = seesaw_constrained(sc, guess_witness(sc, 0, 0, 0), rac_witness(), RAC_QUBIT, restarts=6)
        r_seesaw = -math.log2(ss.value)
        good = abs(r_hier - target) <= tol and abs(r_seesaw - r_hier) <= 1e-3
        ok &= good
        details.append(f"eps={eps:g}: R={r_hier:.5f} (target {target}+-{tol}), seesaw R={r_seesaw:.5f}")
    report(2, ok, "; ".join(details))


def _qubit_randomness(p):
    if p <= 0.75:
        return 0.0
    return randomness_lower(0.0, min(p, RAC_QUBIT))


def test_criterion_03_perturbative_vanishes(report):
    eps = 1e-2
    r = perturbative_randomness(RAC_QUBIT, [eps] * 4, 0, _qubit_randomness)
    report(3, r == 0.0, f"eps=1e-2: perturbative R = {r:.5f} (expected 0)")


@pytest.mark.xfail(strict=True, reason="the stated 46% reduction is not reproduced; see notes/decisions.md")
def test_criterion_03_perturbative_gap(report):
    eps = 1e-3
    exact = randomness_lower(eps)
    pert = perturbative_randomness(RAC_QUBIT, [eps] * 4, 0, _qubit_randomness)
    drop = 1 - pert / exact
    report(3, abs(drop - 0.46) <= 0.05,
           f"eps=1e-3: perturbative R {pert:.5f} vs {exact:.5f}, {100 * drop:.1f}% below (target 46+-5%)")


def test_criterion_04_measurement_certification(report):
    quaternary = hierarchy_bound(cert_scenario(), measurement_cert_witness(), 2).value
    ternary = {eps: cert_ternary_bound(eps)[0] for eps in [0.0, 4e-4, 5e-4]}
    witness = ternary_cert_witnesses()[0]
    seesaw = {eps: seesaw_maximize(cert_scenario(eps, 3), witness, D=4, restarts=8).value for eps in [6e-4, 3.5e-3]}
    checks = [
        abs(quaternary - CERT_QUATERNARY) <= 1e-6,
        abs(ternary[0.0] - 0.78367) <= 5e-4,
        seesaw[6e-4] >= 0.78514,
        seesaw[3.5e-3] > CERT_QUATERNARY,
        # the hierarchy crosses 0.78514 between 4e-4 and 5e-4, i.e. within 1e-4 of 5e-4
        ternary[4e-4] < 0.78514 <= ternary[5e-4],
    ]
    report(4, all(checks),
           f"quaternary {quaternary:.8f}; ternary(0) {ternary[0.0]:.6f}; seesaw(6e-4) {seesaw[6e-4]:.6f}; "
           f"seesaw(3.5e-3) {seesaw[3.5e-3]:.6f} > {CERT_QUATERNARY:.6f}; "
           f"hierarchy(4e-4) {ternary[4e-4]:.6f}, hierarchy(5e-4) {ternary[5e-4]:.6f}")


def test_criterion_05_triple_agreement(report):
    worst, ok = 0.0, True
    for eps in [0.0, 0.05, 0.1, 0.25, 0.5]:
        sc = rac_scenario(epsilon=eps)
        exact = rac_epsilon_analytic(eps)
        upper = hierarchy_bound(sc, rac_witness(), EXTENDED, symmetry=rac_symmetry(sc)).value
        lower = seesaw_maximize(sc, rac_witness(), D=4, restarts=4).value
        spread = max(exact, upper, lower) - min(exact, upper, lower)
        worst = max(worst, spread)
        ok &= spread <= 1e-4
    h = 1e-4
    values = [hierarchy_bound(rac_scenario(epsilon=e), rac_witness(), EXTENDED, TIGHT).value for e in (0.0, h)]
    slope = (values[1] - values[0]) / h
    ok &= abs(slope - 1 / math.sqrt(2)) <= 1e-3
    report(5, ok, f"largest spread {worst:.1e} (tol 1e-4); slope {slope:.5f} vs {1 / math.sqrt(2):.5f} (tol 1e-3)")


def test_criterion_06_qutrit_non_convergence(report):
    floor, quantum = (6 + math.sqrt(2)) / 8, (5 + math.sqrt(5)) / 8
    sc = rac_scenario(d=3)
    values = {lvl: hierarchy_bound(sc, rac_witness(), lvl).value for lvl in [1, "1+RM", 2, EXTENDED, 3]}
    ok = all(v >= floor - 1e-6 and v > quantum for v in values.values())
    shown = ", ".join(f"{k}: {v:.7f}" for k, v in values.items())
    report(6, ok, f"{shown} (floor {floor:.7f}, quantum value {quantum:.7f})")


def test_criterion_07_three_trit_rac(report):
    witness = rac_witness(3, 3)
    rows = []
    for d in [2, 3, 4, 5]:
        sc = rac_scenario(3, 3, d=d)
        upper = hierarchy_bound(sc, witness, BIGRAC_LEVEL, symmetry=rac_symmetry(sc, 3, 3)).value
        lower = seesaw_maximize(sc, witness, D=d, restarts=6, tol=1e-7).value
        rows.append((d, upper, lower, (upper - lower) / upper))
    bracket = all(lo <= up + 1e-6 for _, up, lo, _ in rows)
    ok = bracket and rows[-1][3] < rows[0][3]
    shown = "; ".join(f"d={d}: [{lo:.5f}, {up:.5f}] gap {100 * g:.2f}%" for d, up, lo, g in rows)
    report(7, ok, shown)


def _classical_model(scenario, D, rng):
    """Mixtures of deterministic strategies: diagonal states inside the first ``d`` levels."""
    from almostqudit.seesaw import ExplicitModel

    states = []
    for _ in range(scenario.n_x):
        w = np.zeros(D)
        w[: scenario.d] = rng.dirichlet(np.full(scenario.d, 0.3))
        states.append(np.diag(w).astype(complex))
    povms = []
    for nb in scenario.n_b:
        labels = rng.integers(0, nb, D)
        povms.append(np.array([np.diag((labels == b).astype(float)) for b in range(nb)], dtype=complex))
    return ExplicitModel(D, scenario.d, np.array(states), povms)


def test_criterion_08_hierarchy_soundness(report):
    rng = np.random.default_rng(2026)
    checked, worst, closest = 0, -math.inf, -math.inf
    for k in range(20):
        classical = k % 4 == 3
        n_x = int(rng.integers(2, 5))
        n_b = tuple(int(v) for v in rng.integers(2, 4, int(rng.integers(1, 3))))
        d = int(rng.integers(2, 4))
        eps = [float(rng.choice([0.0, rng.uniform(0, 0.3)])) for _ in range(n_x)]
        sc = Scenario(n_x, n_b, d, eps, classical)
        witness = Witness(rng.normal(size=(max(n_b), n_x, len(n_b))))
        bound = hierarchy_bound(sc, witness, 2).bound
        for j in range(5):
            if classical:
                model = _classical_model(sc, d + 2, rng)
            elif j == 0:
                # a locally optimal model probes the bound much more closely than random ones
                model = seesaw_maximize(sc, witness, restarts=1, seed=k).model
            else:
                model = random_model(sc, d + 2, rng)
            assert max(model.residuals(eps).values()) < 1e-9
            excess = witness.value(behavior_of(model)) - bound
            worst = max(worst, excess)
            if j == 0 and not classical:
                closest = max(closest, excess)
            checked += 1
    report(8, checked == 100 and worst <= 1e-6,
           f"{checked} models, largest value minus bound {worst:.3e} (must be <= 1e-6); "
           f"closest optimized model {closest:.3e}")


def _alphabet(n_x, n_b):
    return [SUBSPACE] + [state(x) for x in range(n_x)] + [measurement(y, b) for y, nb in enumerate(n_b)
                                                          for b in range(nb)]


def _instantiate(mode, n_x, n_b, d, absorbing, D, rng):
    ops = {}
    if mode == "classical":
        perm = rng.permutation(D)
        ops[SUBSPACE] = np.diag((np.arange(D) < d).astype(float)).astype(complex)
        for x in range(n_x):
            k = int(rng.integers(0, d)) if x in absorbing else int(rng.integers(0, D))
            ops[state(x)] = np.diag(np.eye(D)[k]).astype(complex)
        for y, nb in enumerate(n_b):
            labels = rng.integers(0, nb, D)[perm]
            for b in range(nb):
                ops[measurement(y, b)] = np.diag((labels == b).astype(float)).astype(complex)
        return ops
    basis = random_projective_measurement(D, D, rng)
    V = sum(basis[:d])
    ops[SUBSPACE] = V
    for x in range(n_x):
        v = rng.normal(size=D) + 1j * rng.normal(size=D)
        ops[state(x)] = projector(V @ v if x in absorbing else v)
    for y, nb in enumerate(n_b):
        for b, m in enumerate(random_projective_measurement(D, nb, rng)):
            ops[measurement(y, b)] = m
    return ops


def _variant(word, classical, rng):
    """A word with the same trace by construction: rotations, reversal, repeated letters."""
    w = list(word)
    for _ in range(int(rng.integers(1, 4))):
        move = rng.integers(0, 4)
        if move == 0 and w:
            k = int(rng.integers(0, len(w)))
            w = w[k:] + w[:k]
        elif move == 1:
            w = w[::-1]
        elif move == 2 and w:
            k = int(rng.integers(0, len(w)))
            w.insert(k, w[k])
        elif move == 3 and classical and len(w) > 1:
            k = int(rng.integers(0, len(w) - 1))
            w[k], w[k + 1] = w[k + 1], w[k]
    return w


def test_criterion_09_canonicalization_oracle(report):
    rng = np.random.default_rng(9)
    n_x, n_b, d, D = 3, (2, 3), 2, 6
    letters = _alphabet(n_x, n_b)
    settings = [("generic", False, frozenset()), ("absorbing", False, frozenset({0, 2})),
                ("classical", True, frozenset({1}))]
    pairs, zeros, worst, worst_zero = 0, 0, 0.0, 0.0
    for mode, classical, absorbing in settings:
        for _ in range(4):
            ops = _instantiate(mode, n_x, n_b, d, absorbing, D, rng)
            for _ in range(1500):
                w1 = [letters[i] for i in rng.integers(0, len(letters), int(rng.integers(1, 7)))]
                # with probability one half compare against an unrelated word of the same letters
                w2 = _variant(w1, classical, rng) if rng.uniform() < 0.5 else [w1[i] for i in rng.permutation(len(w1))]
                t1 = trace_word(w1, classical, absorbing)
                t2 = trace_word(w2, classical, absorbing)
                tr1 = np.trace(evaluate(w1, ops, D))
                tr2 = np.trace(evaluate(w2, ops, D))
                for tw, tr in ((t1, tr1), (t2, tr2)):
                    if tw.zero:
                        zeros += 1
                        worst_zero = max(worst_zero, abs(tr))
                if t1 == t2 and not t1.zero:
                    a = np.conj(tr1) if t1.conjugated else tr1
                    b = np.conj(tr2) if t2.conjugated else tr2
                    worst = max(worst, abs(a - b))
                    pairs += 1
    ok = pairs >= 10_000 and worst <= 1e-10 and worst_zero <= 1e-10
    report(9, ok, f"{pairs} equal pairs, largest trace mismatch {worst:.1e}; "
                  f"{zeros} zero-flagged words, largest |trace| {worst_zero:.1e}")


def _case_studies():
    yield "qubit RAC", build_moment_problem(rac_scenario(), build_monomial_list(rac_scenario(), 2),
                                            objective=rac_witness()).to_sdp()
    classical = rac_scenario(classical=True)
    yield "classical RAC", build_moment_problem(classical, build_monomial_list(classical, 2),
                                                objective=rac_witness()).to_sdp()
    qutrit = rac_scenario(d=3)
    yield "qutrit RAC", build_moment_problem(qutrit, build_monomial_list(qutrit, 2), objective=rac_witness()).to_sdp()
    almost = rac_scenario(epsilon=0.1)
    prob = build_moment_problem(almost, build_monomial_list(almost, EXTENDED), objective=rac_witness())
    yield "almost-qubit RAC", prob.to_sdp()
    yield "almost-qubit RAC, symmetrized", symmetrize(prob, rac_symmetry(almost)).to_sdp()
    cert = cert_scenario()
    yield "four-outcome certificate", build_moment_problem(cert, build_monomial_list(cert, 2),
                                                           objective=measurement_cert_witness()).to_sdp()
    tern = cert_scenario(5e-4, 3)
    prob = build_moment_problem(tern, build_monomial_list(tern, "2+RMM"), objective=ternary_cert_witnesses()[0])
    yield "three-outcome certificate", symmetrize(prob, cert_symmetry(tern, 0)).to_sdp()
    yield "guessing probability", guessing_sdp(rac_scenario(epsilon=1e-3), rac_witness(), RAC_QUBIT)


def test_criterion_10_interchange_round_trip(report):
    details, ok = [], True
    for name, sdp in _case_studies():
        direct = solve(sdp)
        again = solve(import_sdpa(export_sdpa(sdp)))
        diff = abs(direct.dual_value - again.dual_value)
        ok &= direct.ok and again.ok and diff <= 1e-9
        details.append(f"{name} {direct.dual_value:.8f} (diff {diff:.0e})")
    report(10, ok, "; ".join(details))
