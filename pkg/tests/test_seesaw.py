import math

import numpy as np
import pytest

from almostqudit.errors import DomainError
from almostqudit.scenarios import (RAC_QUBIT, Scenario, Witness, rac_epsilon_analytic, rac_scenario, rac_witness)
from almostqudit.seesaw import (ExplicitModel, bb84_states, behavior_of, best_binary_measurement, best_state,
                                channel_fidelity, choi_fidelity, guess_witness, rac_model, random_model,
                                seesaw_constrained, seesaw_maximize, selftest_fidelity, shared_randomness_curve)


def test_maximally_mixed_model_is_uninformative():
    D = 3
    states = np.array([np.eye(D) / D] * 2)
    povm = np.array([np.eye(D) / 2, np.eye(D) / 2])
    model = ExplicitModel(D, 2, states, [povm])
    p = behavior_of(model).probabilities
    assert np.allclose(p, 0.5)
    assert model.residuals(1 / 3)["subspace"] == pytest.approx(0.0)
    assert model.residuals(0.0)["subspace"] == pytest.approx(1 / 3)


def test_four_level_model_reaches_closed_form():
    for eps in [0.0, 0.1, 0.3]:
        model = rac_model(eps)
        res = model.residuals(eps)
        assert max(res.values()) < 1e-12
        assert model.is_projective()
        assert rac_witness().value(behavior_of(model)) == pytest.approx(rac_epsilon_analytic(eps), abs=1e-12)


def test_model_serialisation_round_trip():
    model = random_model(rac_scenario(epsilon=0.1), 4, np.random.default_rng(3))
    back = ExplicitModel.loads(model.dumps())
    assert back.D == model.D and back.d == model.d
    assert np.allclose(back.states, model.states)
    assert all(np.allclose(a, b) for a, b in zip(back.povms, model.povms))


def test_state_step_respects_subspace_weight():
    rng = np.random.default_rng(0)
    D, eps = 4, 0.2
    P = np.diag([1.0, 1.0, 0.0, 0.0])
    A = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    B = (A + A.conj().T) / 2
    val, rho = best_state(B, P, eps)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.trace(P @ rho).real >= 1 - eps - 1e-9
    assert np.linalg.eigvalsh(rho)[0] > -1e-10
    assert np.trace(B @ rho).real == pytest.approx(val, abs=1e-8)
    # no state with the same constraint does better (checked against random feasible states)
    for _ in range(200):
        v = rng.normal(size=D) + 1j * rng.normal(size=D)
        v /= np.linalg.norm(v)
        if np.linalg.norm(v[:2]) ** 2 >= 1 - eps:
            assert np.real(v.conj() @ B @ v) <= val + 1e-9


def test_binary_measurement_step_is_optimal():
    rng = np.random.default_rng(1)
    C0, C1 = (np.diag(rng.normal(size=3)) for _ in range(2))
    M0, M1 = best_binary_measurement(C0, C1)
    assert np.allclose(M0 + M1, np.eye(3))
    best = np.trace(C0 @ M0 + C1 @ M1).real
    # any diagonal effect is worse
    for _ in range(100):
        E = np.diag(rng.uniform(size=3))
        assert np.trace(C0 @ E + C1 @ (np.eye(3) - E)).real <= best + 1e-12


def test_seesaw_history_is_monotone_and_model_feasible():
    sc = rac_scenario(epsilon=0.1)
    res = seesaw_maximize(sc, rac_witness(), D=4, restarts=3, tol=1e-10)
    hist = np.array(res.history)
    assert np.all(np.diff(hist) > -1e-9)
    assert max(res.model.residuals(0.1).values()) < 1e-8
    assert rac_witness().value(behavior_of(res.model)) == pytest.approx(res.value, abs=1e-12)
    assert res.value == pytest.approx(rac_epsilon_analytic(0.1), abs=1e-6)


def test_seesaw_rejects_small_ambient_dimension():
    with pytest.raises(DomainError):
        seesaw_maximize(rac_scenario(d=3), rac_witness(), D=2, restarts=1)


def test_constrained_seesaw_at_classical_value():
    # at p = 3/4 a deterministic strategy fixes every outcome, so the guess is certain
    sc = rac_scenario()
    res = seesaw_constrained(sc, guess_witness(sc, 0, 0, 0), rac_witness(), 0.75, D=2, restarts=4)
    assert res.value == pytest.approx(1.0, abs=1e-4)
    assert rac_witness().value(behavior_of(res.model)) == pytest.approx(0.75, abs=1e-6)


def test_selftest_bb84_point():
    p, F = selftest_fidelity(math.pi / 4, 0.0)
    assert p == pytest.approx(RAC_QUBIT, abs=1e-12)
    assert F == pytest.approx(1.0, abs=1e-6)
    assert selftest_fidelity(0.0, 0.0)[1] < 1 - 0.1
    with pytest.raises(DomainError):
        selftest_fidelity(math.pi / 4, 2.0)


def test_truncation_channel_reaches_one_minus_epsilon():
    eps = 0.05
    vecs = np.array([v for v in rac_model(eps).states], dtype=complex)
    # pure states: recover vectors from the rank-one projectors
    kets = np.array([np.linalg.eigh(r)[1][:, -1] for r in vecs])
    targets = bb84_states()
    # project onto the qubit levels and send the complement to a fixed state
    K0 = np.zeros((2, 4), dtype=complex)
    K0[:, :2] = np.eye(2)
    kraus = [K0]
    for level in (2, 3):
        K = np.zeros((2, 4), dtype=complex)
        K[0, level] = 1.0
        kraus.append(K)
    assert np.allclose(sum(K.conj().T @ K for K in kraus), np.eye(4))
    F_fixed = channel_fidelity(kets, targets, kraus)
    assert F_fixed >= 1 - eps - 1e-9
    assert choi_fidelity(kets, targets) >= F_fixed - 1e-6


def test_shared_randomness_curve_is_convex_from_below():
    curve = shared_randomness_curve([(0.75, 0.5), (0.8, 0.9), (0.85, 1.0)])
    # the middle point lies above the chord and is dropped
    assert curve.tolist() == [[0.75, 0.5], [0.85, 1.0]]


def test_random_models_are_valid():
    rng = np.random.default_rng(5)
    sc = Scenario(3, (2, 3), 2, [0.0, 0.1, 0.2])
    for _ in range(5):
        model = random_model(sc, 4, rng)
        assert max(model.residuals(sc.epsilons).values()) < 1e-10
        p = behavior_of(model).probabilities
        assert np.allclose(p[:2, :, 0].sum(axis=0), 1)
        assert np.allclose(p[:3, :, 1].sum(axis=0), 1)
        assert Witness(np.ones((3, 3, 2))).value(p) == pytest.approx(6.0)
