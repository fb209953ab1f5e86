import math

import numpy as np
import pytest

from almostqudit.errors import DomainError
from almostqudit.scenarios import (CERT_QUATERNARY, RAC_QUBIT, almost_qubit_states, coherent_state_epsilon,
                                   coherent_state_fock_weight, deterministic_optimum, envelope_value,
                                   first_order, guessing_probability, hierarchy_bound, measurement_cert_witness,
                                   perturbative_bound, perturbative_randomness, rac_epsilon_analytic,
                                   Scenario, rac_scenario, rac_value_optimal_measurement, rac_witness,
                                   ternary_cert_witnesses, upper_concave_envelope)


def test_analytic_rac_curve():
    assert rac_epsilon_analytic(0.0) == pytest.approx(RAC_QUBIT, abs=1e-12)
    assert rac_epsilon_analytic(0.5) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        rac_epsilon_analytic(0.6)
    assert first_order(0.01) == pytest.approx(RAC_QUBIT + 0.01 / math.sqrt(2))
    # the curve is increasing and concave near zero
    grid = [rac_epsilon_analytic(e) for e in np.linspace(0, 0.5, 11)]
    assert all(b > a for a, b in zip(grid, grid[1:]))


def test_state_family_matches_closed_form():
    for eps in [0.0, 0.05, 0.2, 0.5]:
        states = almost_qubit_states(eps)
        norms = np.linalg.norm(states, axis=1)
        assert np.allclose(norms, 1)
        assert np.allclose(np.abs(states[:, :2]) ** 2 @ np.ones(2), 1 - eps)
        assert rac_value_optimal_measurement(states) == pytest.approx(rac_epsilon_analytic(eps), abs=1e-12)


def test_perturbative_constants():
    rac = rac_witness()
    assert rac.perturbation_constant(0.01) == pytest.approx(0.02)
    cert = measurement_cert_witness()
    # 3 binary settings at 1/12 plus one four-outcome setting at 1/5, per preparation
    assert cert.perturbation_constant(0.01) == pytest.approx(2 * 0.01 * 4 * (3 / 12 + 1 / 5))
    assert perturbative_bound(cert, CERT_QUATERNARY, 0.0) == pytest.approx(CERT_QUATERNARY)


def test_perturbative_randomness_vanishes_at_large_epsilon():
    def r0(p):
        return 0.2 if p > 0.85 else 0.0

    assert perturbative_randomness(RAC_QUBIT, [0.01] * 4, 0, r0) == 0.0
    assert perturbative_randomness(RAC_QUBIT, [0.0] * 4, 0, r0) == pytest.approx(0.2)
    with pytest.raises(DomainError):
        perturbative_randomness(RAC_QUBIT, 0.01, 0, r0)


def test_deterministic_optimum_of_rac():
    assert deterministic_optimum(4, (2, 2), rac_witness()) == pytest.approx(0.75)
    assert hierarchy_bound(rac_scenario(classical=True), rac_witness()).value == pytest.approx(0.75, abs=1e-6)


def test_ternary_witness_reduction():
    full = measurement_cert_witness().coefficients
    for k, w in enumerate(ternary_cert_witnesses()):
        c = w.coefficients
        assert c.shape == (3, 4, 4)
        # the four-outcome coefficients that survive are exactly the ones not on label k
        assert sorted(c[:, :, 3].ravel()) == sorted(np.delete(full[:, :, 3], k, axis=0).ravel())


def test_guessing_without_randomness():
    # a deterministic classical strategy reaches 3/4, so nothing is certified there
    res = guessing_probability(rac_scenario(), rac_witness(), 0.75)
    assert res.p_guess == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(DomainError):
        guessing_probability(rac_scenario(), rac_witness(), 0.9)


def test_envelope():
    hull = upper_concave_envelope([(0, 0), (1, 0.2), (2, 1), (3, 0.5), (1, 0.9)])
    assert hull.tolist() == [[0, 0], [1, 0.9], [2, 1], [3, 0.5]]
    assert envelope_value(hull, 1.5) == pytest.approx(0.95)


def test_coherent_state_weights():
    assert coherent_state_fock_weight(0.0) == 0.0
    a = 0.3
    r2 = a * a
    tail = 1 - sum(math.exp(-r2) * r2 ** n / math.factorial(n) for n in range(2))
    assert coherent_state_fock_weight(a) == pytest.approx(tail, rel=1e-12)
    assert 0 <= coherent_state_epsilon(a) < 1


def test_single_level_message_is_classical():
    w = rac_witness()
    assert hierarchy_bound(Scenario(4, (2, 2), 1), w).value == pytest.approx(
        deterministic_optimum(4, (2, 2), w, dim=1), abs=1e-6)


def test_uniform_behavior_is_feasible():
    from almostqudit.moments import build_moment_problem, build_monomial_list
    from almostqudit.sdp import solve

    sc = rac_scenario(d=2)
    prob = build_moment_problem(sc, build_monomial_list(sc, 2), behavior=np.full((2, 4, 2), 0.5))
    assert solve(prob.to_sdp()).status == "optimal"


def test_guessing_monotonicity():
    sc = rac_scenario()
    p_low, p_high = (guessing_probability(sc, rac_witness(), p).p_guess for p in (0.8, 0.84))
    assert p_high <= p_low + 1e-6
    noisy = guessing_probability(rac_scenario(epsilon=1e-3), rac_witness(), 0.84).p_guess
    assert noisy >= p_high - 1e-6


def test_perturbative_bound_is_looser_than_hierarchy():
    w = rac_witness()
    for eps in [0.01, 0.05, 0.2]:
        exact = hierarchy_bound(rac_scenario(epsilon=eps), w, "2+RVM+VRM+RMV").value
        assert exact <= perturbative_bound(w, RAC_QUBIT, eps) + 1e-6
