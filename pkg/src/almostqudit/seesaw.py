"""Explicit finite-dimensional models and seesaw lower bounds.

A seesaw alternates two convex problems: with the states fixed the best
measurements are found, then with the measurements fixed the best states.
Each step cannot decrease the objective, so the value climbs to a local
optimum; restarts from random measurements look for the global one.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import unitary_group

from .errors import DomainError
from .moments import Scenario
from .opalg import SUBSPACE, measurement, state
from .scenarios import Behavior, Witness, almost_qubit_states, rac_value_optimal_measurement

log = logging.getLogger(__name__)

# Clarabel handles the complex Hermitian blocks directly; tight tolerances keep the
# equality-constrained steps from drifting off the observed witness value.
_CVX = {"solver": cp.CLARABEL, "tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10,
        "warm_start": False}


@dataclass
class ExplicitModel:
    """States ``rho_x`` and POVMs ``M_{b|y}`` on ``C^D``; the subspace is the first ``d`` levels."""

    D: int
    d: int
    states: np.ndarray
    povms: list

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=complex)
        self.povms = [np.asarray(p, dtype=complex) for p in self.povms]

    @property
    def projector(self) -> np.ndarray:
        P = np.zeros((self.D, self.D))
        P[: self.d, : self.d] = np.eye(self.d)
        return P

    @property
    def n_b(self) -> tuple:
        return tuple(len(p) for p in self.povms)

    def subspace_weights(self) -> np.ndarray:
        """``Tr(rho_x Pi_d)`` for every preparation."""
        return np.real(np.einsum("xii->x", self.states[:, : self.d, : self.d]))

    def residuals(self, epsilons=None) -> dict:
        """Largest violation of positivity, normalisation, completeness and the subspace condition."""
        eye = np.eye(self.D)
        out = {
            "state_psd": max(0.0, -min(np.linalg.eigvalsh(r)[0] for r in self.states)),
            "trace": float(np.max(np.abs(np.trace(self.states, axis1=1, axis2=2) - 1))),
            "povm_psd": max(0.0, -min(np.linalg.eigvalsh(m)[0] for p in self.povms for m in p)),
            "completeness": max(float(np.abs(p.sum(axis=0) - eye).max()) for p in self.povms),
        }
        if epsilons is not None:
            eps = np.broadcast_to(np.asarray(epsilons, dtype=float), (len(self.states),))
            out["subspace"] = float(np.max(np.maximum(0.0, (1 - eps) - self.subspace_weights())))
        return out

    def is_projective(self, tol=1e-8) -> bool:
        pure = all(abs(np.trace(r @ r) - 1) < tol for r in self.states)
        proj = all(np.abs(m @ m - m).max() < tol for p in self.povms for m in p)
        return pure and proj

    def symbol_operators(self) -> dict:
        """Matrices for every operator symbol, for evaluating moments."""
        ops = {SUBSPACE: self.projector.astype(complex)}
        for x, r in enumerate(self.states):
            ops[state(x)] = r
        for y, p in enumerate(self.povms):
            for b, m in enumerate(p):
                ops[measurement(y, b)] = m
        return ops

    # --- serialisation (complex entries as row-major [re, im] pairs) --------
    def to_dict(self) -> dict:
        def enc(a):
            return [[[float(v.real), float(v.imag)] for v in row] for row in a]

        return {"D": self.D, "d": self.d, "states": [enc(r) for r in self.states],
                "povms": [[enc(m) for m in p] for p in self.povms]}

    @classmethod
    def from_dict(cls, data: dict) -> "ExplicitModel":
        def dec(a):
            arr = np.asarray(a, dtype=float)
            return arr[..., 0] + 1j * arr[..., 1]

        return cls(int(data["D"]), int(data["d"]), np.array([dec(r) for r in data["states"]]),
                   [np.array([dec(m) for m in p]) for p in data["povms"]])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ExplicitModel":
        return cls.from_dict(json.loads(text))


def behavior_of(model: ExplicitModel) -> Behavior:
    """Born probabilities ``Tr(rho_x M_{b|y})``."""
    nb = model.n_b
    p = np.zeros((max(nb), len(model.states), len(nb)))
    for y, povm in enumerate(model.povms):
        p[: nb[y], :, y] = np.real(np.einsum("xij,bji->bx", model.states, povm))
    return Behavior(np.clip(p, 0.0, None) / p.sum(axis=0, keepdims=True).clip(1e-300), nb)


def projector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj()) / np.vdot(v, v).real


def random_projective_measurement(D: int, n_outcomes: int, rng) -> np.ndarray:
    """Projectors onto a Haar-random basis, grouped into ``n_outcomes`` nonempty blocks."""
    U = unitary_group.rvs(D, random_state=rng) if D > 1 else np.eye(1, dtype=complex)
    labels = np.concatenate([np.arange(min(n_outcomes, D)), rng.integers(0, n_outcomes, max(0, D - n_outcomes))])
    rng.shuffle(labels)
    out = np.zeros((n_outcomes, D, D), dtype=complex)
    for k, b in enumerate(labels):
        out[b] += np.outer(U[:, k], U[:, k].conj())
    return out


def random_model(scenario: Scenario, D: int, rng) -> ExplicitModel:
    """Pure states meeting the subspace condition and random projective measurements."""
    states = []
    for x in range(scenario.n_x):
        eps = scenario.epsilons[x]
        inner = rng.normal(size=scenario.d) + 1j * rng.normal(size=scenario.d)
        inner /= np.linalg.norm(inner)
        v = np.zeros(D, dtype=complex)
        if D > scenario.d and eps > 0:
            t = eps * rng.uniform()
            outer = rng.normal(size=D - scenario.d) + 1j * rng.normal(size=D - scenario.d)
            outer /= np.linalg.norm(outer)
            v[: scenario.d] = math.sqrt(1 - t) * inner
            v[scenario.d:] = math.sqrt(t) * outer
        else:
            v[: scenario.d] = inner
        states.append(projector(v))
    povms = [random_projective_measurement(D, nb, rng) for nb in scenario.n_b]
    return ExplicitModel(D, scenario.d, np.array(states), povms)


# --------------------------------------------------------------------------
# convex subproblems


def best_state(B: np.ndarray, P: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Maximise ``Tr(rho B)`` over states with ``Tr(rho P) >= 1 - eps``.

    The value is ``min_{mu >= 0} lambda_max(B + mu P) - mu (1 - eps)``; an
    optimal state is pure (one linear constraint on a spectrahedron), picked
    inside the top eigenspace so that the constraint holds.
    """
    B = (B + B.conj().T) / 2

    def top(mu):
        return np.linalg.eigvalsh(B + mu * P)[-1] - mu * (1 - eps)

    w, V = np.linalg.eigh(B)
    v = V[:, -1]
    if np.real(v.conj() @ P @ v) >= 1 - eps - 1e-12:
        return float(w[-1]), projector(v)
    scale = 1 + 2 * np.abs(w).max()
    hi = scale / max(eps, 1e-12) + scale
    res = minimize_scalar(top, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-13 * hi})
    mu = res.x
    w, V = np.linalg.eigh(B + mu * P)
    tol = 1e-7 * scale
    U = V[:, w >= w[-1] - tol]
    pw, pv = np.linalg.eigh(U.conj().T @ P @ U)
    target = 1 - eps
    if pw[-1] <= target or U.shape[1] == 1:
        u = U @ pv[:, -1]
    else:
        lo, hi_ = pw[0], pw[-1]
        s2 = 0.0 if hi_ == lo else min(1.0, max(0.0, (target - lo) / (hi_ - lo)))
        u = U @ (math.sqrt(1 - s2) * pv[:, 0] + math.sqrt(s2) * pv[:, -1])
    rho = projector(u)
    # bring the subspace weight exactly onto the constraint if rounding left it short
    rho = _repair_state(rho, P, eps)
    return float(np.real(np.trace(rho @ B))), rho


def _repair_state(rho, P, eps):
    weight = np.real(np.trace(rho @ P))
    if weight >= 1 - eps or weight <= 0:
        return rho
    w, V = np.linalg.eigh(rho)
    v = V[:, -1]
    inner, outer = P @ v, v - P @ v
    ni, no = np.linalg.norm(inner), np.linalg.norm(outer)
    if no == 0:
        return rho
    t = min(eps, no * no)
    v = math.sqrt(1 - t) * inner / ni + math.sqrt(t) * outer / no
    return projector(v)


def best_binary_measurement(C0: np.ndarray, C1: np.ndarray) -> np.ndarray:
    """Maximise ``Tr(M0 C0) + Tr(M1 C1)``: project onto the positive part of ``C0 - C1``."""
    w, V = np.linalg.eigh((C0 - C1 + (C0 - C1).conj().T) / 2)
    Vp = V[:, w > 0]
    M0 = Vp @ Vp.conj().T
    return np.array([M0, np.eye(len(C0)) - M0])


class _PovmProblem:
    """Parametrised cvxpy problem: best POVM for given operator weights."""

    def __init__(self, D, n_b):
        self.C = [cp.Parameter((D, D), hermitian=True) for _ in range(n_b)]
        self.M = [cp.Variable((D, D), hermitian=True) for _ in range(n_b)]
        cons = [m >> 0 for m in self.M] + [sum(self.M) == np.eye(D)]
        obj = sum(cp.real(cp.trace(c @ m)) for c, m in zip(self.C, self.M))
        self.problem = cp.Problem(cp.Maximize(obj), cons)

    def solve(self, C):
        for par, val in zip(self.C, C):
            par.value = (val + val.conj().T) / 2
        self.problem.solve(**_CVX)
        if self.problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise RuntimeError(f"measurement step failed: {self.problem.status}")
        return _repair_povm(np.array([m.value for m in self.M]))


def _repair_povm(M):
    """Project numerically returned POVM elements back onto the POVM set."""
    M = (M + M.conj().transpose(0, 2, 1)) / 2
    fixed = []
    for m in M:
        w, V = np.linalg.eigh(m)
        fixed.append((V * np.clip(w, 0, None)) @ V.conj().T)
    M = np.array(fixed)
    S = M.sum(axis=0)
    w, V = np.linalg.eigh(S)
    Sinv_half = (V / np.sqrt(np.clip(w, 1e-12, None))) @ V.conj().T
    return np.array([Sinv_half @ m @ Sinv_half for m in M])


def _weights(witness_c, states, y, nb):
    """``C_b = sum_x c[b, x, y] rho_x`` for one setting."""
    return [np.tensordot(witness_c[b, :, y], states, axes=1) for b in range(nb)]


def _state_operators(witness_c, povms, n_x):
    """``B_x = sum_{b, y} c[b, x, y] M_{b|y}``."""
    D = povms[0].shape[1]
    out = np.zeros((n_x, D, D), dtype=complex)
    for y, p in enumerate(povms):
        for b in range(len(p)):
            out += witness_c[b, :, y][:, None, None] * p[b][None]
    return out


def guess_witness(scenario: Scenario, x: int, y: int, b: int) -> Witness:
    """The single probability ``p(b|x, y)`` as a witness, the objective of a guessing adversary."""
    c = np.zeros((max(scenario.n_b), scenario.n_x, scenario.n_y))
    c[b, x, y] = 1.0
    return Witness(c, f"p({b}|{x},{y})")


def _value(witness_c, model):
    return Witness(witness_c).value(behavior_of(model))


# --------------------------------------------------------------------------
# seesaw drivers


@dataclass
class SeesawResult:
    value: float
    model: ExplicitModel | None
    history: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    failures: int = 0


def _one_run(scenario: Scenario, c: np.ndarray, D: int, seed: int, tol: float, max_rounds: int):
    rng = np.random.default_rng(seed)
    P = np.zeros((D, D))
    P[: scenario.d, : scenario.d] = np.eye(scenario.d)
    povms = [random_projective_measurement(D, nb, rng) for nb in scenario.n_b]
    sdp_steps = {y: _PovmProblem(D, nb) for y, nb in enumerate(scenario.n_b) if nb > 2}
    history = []
    states = None
    prev = -math.inf
    for _ in range(max_rounds):
        B = _state_operators(c, povms, scenario.n_x)
        states = np.array([best_state(B[x], P, scenario.epsilons[x])[1] for x in range(scenario.n_x)])
        new = []
        for y, nb in enumerate(scenario.n_b):
            C = _weights(c, states, y, nb)
            new.append(best_binary_measurement(*C) if nb == 2 else sdp_steps[y].solve(C))
        povms = new
        candidate = ExplicitModel(D, scenario.d, states, povms)
        val = _value(c, candidate)
        history.append(val)
        if val >= max(history):
            model = candidate
        if val - prev < tol:
            break
        prev = val
    return max(history), model, history


def seesaw_maximize(scenario: Scenario, witness: Witness, D: int | None = None, restarts: int = 50,
                    tol: float = 1e-9, max_rounds: int = 500, seed: int = 0, workers: int = 1) -> SeesawResult:
    """Lower bound on the maximum of ``witness`` from explicit models in dimension ``D``.

    ``D`` defaults to ``d + 2``.  Restart ``k`` uses seed ``seed + k``.
    """
    D = scenario.d + 2 if D is None else D
    if D < scenario.d:
        raise DomainError("the ambient dimension must be at least d")
    c = witness.coefficients
    seeds = [seed + k for k in range(restarts)]
    best = SeesawResult(-math.inf, None, seeds=seeds)
    args = [(scenario, c, D, s, tol, max_rounds) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_safe_run, args))
    else:
        outcomes = [_safe_run(a) for a in args]
    for out in outcomes:
        if out is None:
            best.failures += 1
            continue
        val, model, hist = out
        if val > best.value:
            best.value, best.model, best.history = val, model, hist
    return best


def _safe_run(args):
    try:
        return _one_run(*args)
    except (RuntimeError, cp.error.SolverError, np.linalg.LinAlgError) as exc:
        log.warning("seesaw restart with seed %s failed: %s", args[3], exc)
        return None


def seesaw_constrained(scenario: Scenario, objective: Witness, constraint: Witness, value: float,
                       D: int | None = None, restarts: int = 10, tol: float = 1e-9, max_rounds: int = 300,
                       seed: int = 0, start: ExplicitModel | None = None) -> SeesawResult:
    """Maximise ``objective`` over explicit models with ``constraint(p) == value``.

    Each restart first climbs ``constraint`` with the unconstrained seesaw; if
    it cannot reach ``value`` the restart is dropped.  From there both steps
    are SDPs carrying the equality.
    """
    D = scenario.d + 2 if D is None else D
    co, cc = objective.coefficients, constraint.coefficients
    P = np.zeros((D, D))
    P[: scenario.d, : scenario.d] = np.eye(scenario.d)
    best = SeesawResult(-math.inf, None, seeds=[seed + k for k in range(restarts)])
    for k in range(restarts):
        if start is not None and k == 0:
            model = start
        else:
            out = _safe_run((scenario, cc, D, seed + k, tol, max_rounds))
            if out is None or out[0] < value - 1e-7:
                best.failures += 1
                continue
            model = out[1]
            if out[0] < value + 1e-7:
                # the observed value is the maximum; the equality leaves no room to move
                val = _value(co, model)
                if val > best.value:
                    best.value, best.model, best.history = val, model, [val]
                continue
        try:
            val, model, hist = _constrained_run(scenario, co, cc, value, model, P, tol, max_rounds)
        except (RuntimeError, cp.error.SolverError) as exc:
            log.warning("constrained seesaw restart %d failed: %s", k, exc)
            best.failures += 1
            continue
        if val > best.value:
            best.value, best.model, best.history = val, model, hist
    return best


def _constrained_run(scenario, co, cc, value, model, P, tol, max_rounds):
    D = model.D
    n_x, n_b = scenario.n_x, scenario.n_b
    # measurement step
    Ms = [[cp.Variable((D, D), hermitian=True) for _ in range(nb)] for nb in n_b]
    Co = [[cp.Parameter((D, D), hermitian=True) for _ in range(nb)] for nb in n_b]
    Cc = [[cp.Parameter((D, D), hermitian=True) for _ in range(nb)] for nb in n_b]
    cons = [m >> 0 for p in Ms for m in p] + [sum(p) == np.eye(D) for p in Ms]
    wexpr = sum(cp.real(cp.trace(c @ m)) for cs, ps in zip(Cc, Ms) for c, m in zip(cs, ps))
    oexpr = sum(cp.real(cp.trace(c @ m)) for cs, ps in zip(Co, Ms) for c, m in zip(cs, ps))
    meas = cp.Problem(cp.Maximize(oexpr), cons + [wexpr == value])
    # state step
    R = [cp.Variable((D, D), hermitian=True) for _ in range(n_x)]
    Bo = [cp.Parameter((D, D), hermitian=True) for _ in range(n_x)]
    Bc = [cp.Parameter((D, D), hermitian=True) for _ in range(n_x)]
    scons = [r >> 0 for r in R] + [cp.real(cp.trace(r)) == 1 for r in R]
    scons += [cp.real(cp.trace(P @ r)) >= 1 - e for r, e in zip(R, scenario.epsilons)]
    swexpr = sum(cp.real(cp.trace(b @ r)) for b, r in zip(Bc, R))
    soexpr = sum(cp.real(cp.trace(b @ r)) for b, r in zip(Bo, R))
    sprob = cp.Problem(cp.Maximize(soexpr), scons + [swexpr == value])

    def herm(a):
        return (a + a.conj().T) / 2

    states, povms = model.states, model.povms
    history = []
    prev = -math.inf
    for _ in range(max_rounds):
        for y, nb in enumerate(n_b):
            for b in range(nb):
                Co[y][b].value = herm(np.tensordot(co[b, :, y], states, axes=1))
                Cc[y][b].value = herm(np.tensordot(cc[b, :, y], states, axes=1))
        meas.solve(**_CVX)
        if meas.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise RuntimeError(f"measurement step: {meas.status}")
        povms = [_repair_povm(np.array([m.value for m in p])) for p in Ms]
        Bo_val = _state_operators(co, povms, n_x)
        Bc_val = _state_operators(cc, povms, n_x)
        for x in range(n_x):
            Bo[x].value, Bc[x].value = herm(Bo_val[x]), herm(Bc_val[x])
        sprob.solve(**_CVX)
        if sprob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise RuntimeError(f"state step: {sprob.status}")
        states = np.array([_repair_density(r.value, P, e) for r, e in zip(R, scenario.epsilons)])
        candidate = ExplicitModel(D, scenario.d, states, povms)
        val = _value(co, candidate)
        history.append(val)
        if val >= max(history):
            model = candidate
        if abs(val - prev) < tol:
            break
        prev = val
    return max(history), model, history


def _repair_density(r, P=None, eps=1.0):
    """Nearest-looking valid state: clip negative eigenvalues, renormalise, restore the subspace weight."""
    r = (r + r.conj().T) / 2
    w, V = np.linalg.eigh(r)
    r = (V * np.clip(w, 0, None)) @ V.conj().T
    r = r / np.real(np.trace(r))
    if P is not None:
        weight = np.real(np.trace(P @ r))
        if weight < 1 - eps:
            inner = P @ r @ P
            inner = inner / np.real(np.trace(inner))
            t = (1 - eps - weight) / (1 - weight)
            r = (1 - t) * r + t * inner
    return r


# --------------------------------------------------------------------------
# the four-level family and self-testing


def rac_model(epsilon: float, theta: float = math.pi / 4) -> ExplicitModel:
    """Four-level almost-qubit states with the eigenspace-optimal binary measurements."""
    from .scenarios import rac_observables

    vecs = almost_qubit_states(epsilon, theta)
    povms = []
    for O in rac_observables(vecs):
        w, V = np.linalg.eigh(O)
        Vp = V[:, w > 0]
        M0 = Vp @ Vp.conj().T
        povms.append(np.array([M0, np.eye(4) - M0]))
    return ExplicitModel(4, 2, np.array([projector(v) for v in vecs]), povms)


def bb84_states() -> np.ndarray:
    """The qubit states the four-level family reduces to at ``epsilon = 0``, ``theta = pi/4``."""
    return almost_qubit_states(0.0)[:, :2]


def choi_fidelity(states: np.ndarray, targets: np.ndarray) -> float:
    """Best average fidelity ``1/n sum_x <psi_x| L(rho_x) |psi_x>`` over channels ``L``.

    ``L`` is encoded by its Choi matrix ``J`` on input (x) output, positive
    with ``Tr_out J = 1``; then ``<psi|L(rho)|psi> = Tr[J (rho^T (x) |psi><psi|)]``.
    """
    din, dout = states.shape[1], targets.shape[1]
    J = cp.Variable((din * dout, din * dout), hermitian=True)
    obj = 0
    for v, psi in zip(states, targets):
        rho = np.outer(v, v.conj())
        obj = obj + cp.real(cp.trace(J @ np.kron(rho.T, np.outer(psi, psi.conj()))))
    cons = [J >> 0, cp.partial_trace(J, (din, dout), axis=1) == np.eye(din)]
    prob = cp.Problem(cp.Maximize(obj / len(states)), cons)
    prob.solve(**_CVX)
    return float(prob.value)


def channel_fidelity(states: np.ndarray, targets: np.ndarray, kraus) -> float:
    """Average fidelity reached by a fixed channel given by Kraus operators."""
    total = 0.0
    for v, psi in zip(states, targets):
        out = sum(K @ np.outer(v, v.conj()) @ K.conj().T for K in kraus)
        total += np.real(psi.conj() @ out @ psi)
    return total / len(states)


def selftest_fidelity(theta: float, epsilon: float) -> tuple[float, float]:
    """``(p_RAC, F)``: code value of the four-level family and its best fidelity to BB84."""
    if not 0 <= epsilon <= 1 or not 0 <= theta <= math.pi / 2:
        raise DomainError("need 0 <= epsilon <= 1 and 0 <= theta <= pi/2")
    vecs = almost_qubit_states(epsilon, theta)
    return rac_value_optimal_measurement(vecs), choi_fidelity(vecs, bb84_states())


def shared_randomness_curve(points) -> np.ndarray:
    """Fidelity bound when strategies may be mixed: lower convex envelope of ``(p, F)`` points."""
    from .scenarios import upper_concave_envelope

    pts = np.asarray(points, dtype=float)
    hull = upper_concave_envelope([(p, -f) for p, f in pts])
    return np.column_stack([hull[:, 0], -hull[:, 1]])
