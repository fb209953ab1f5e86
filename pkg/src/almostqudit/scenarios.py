"""Behaviours, witnesses and the protocol-level quantities built on them.

Indices are zero-based throughout: probabilities and witness coefficients
are arrays indexed ``[b, x, y]``, padded with zeros where a setting has fewer
outcomes than the largest one.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .moments import (Relabeling, Scenario, SymmetryGroup, assemble, build_moment_problem,
                      build_monomial_list)
from .sdp import SdpProblem, SdpSolution, SolverSettings, solve

RAC_QUBIT = (2 + math.sqrt(2)) / 4
CERT_QUATERNARY = (3 + math.sqrt(3)) / 6

# Desk-scale level for the three-trit code: every rho M, M rho, M M and V M word on
# top of level 1.  Full level 2 (a 1097-row moment matrix) is left to long runs.
BIGRAC_LEVEL = "1+RM+MR+MM+VM"


@dataclass
class Behavior:
    """Conditional probabilities ``p(b|x,y)`` stored as ``probabilities[b, x, y]``."""

    probabilities: np.ndarray
    n_b: tuple

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        self.n_b = tuple(self.n_b)
        p = self.probabilities
        if p.ndim != 3 or p.shape[2] != len(self.n_b) or p.shape[0] < max(self.n_b):
            raise DomainError("probability array does not match the outcome counts")
        for y, nb in enumerate(self.n_b):
            if np.any(p[nb:, :, y] != 0):
                raise DomainError(f"setting {y} has probability on nonexistent outcomes")
            if np.any(p[:nb, :, y] < -1e-12):
                raise DomainError("probabilities must be nonnegative")
            if np.any(np.abs(p[:nb, :, y].sum(axis=0) - 1) > 1e-9):
                raise DomainError(f"probabilities of setting {y} do not sum to one")

    @property
    def n_x(self) -> int:
        return self.probabilities.shape[1]

    def __call__(self, b, x, y) -> float:
        return float(self.probabilities[b, x, y])


@dataclass
class Witness:
    """Linear functional ``W(p) = sum c[b, x, y] p(b|x,y)``."""

    coefficients: np.ndarray
    name: str = "witness"

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.ndim != 3 or not np.all(np.isfinite(self.coefficients)):
            raise DomainError("witness coefficients must be a finite [b, x, y] array")

    def value(self, behavior) -> float:
        p = getattr(behavior, "probabilities", behavior)
        c = self.coefficients
        nb = min(c.shape[0], p.shape[0])
        return float(np.sum(c[:nb] * p[:nb]))

    def perturbation_constant(self, epsilons) -> float:
        """``2 sum_x eps_x sum_y max_b |c_bxy|``, the worst-case shift for almost qudits."""
        eps = np.broadcast_to(np.asarray(epsilons, dtype=float), (self.coefficients.shape[1],))
        per_x = np.abs(self.coefficients).max(axis=0).sum(axis=1)
        return float(2 * eps @ per_x)


# --------------------------------------------------------------------------
# witnesses of the case studies


def digits(x: int, n_digits: int, alphabet: int) -> tuple:
    """Base-``alphabet`` digits of ``x``, most significant first."""
    out = []
    for _ in range(n_digits):
        x, r = divmod(x, alphabet)
        out.append(r)
    return tuple(reversed(out))


def rac_scenario(n_digits: int = 2, alphabet: int = 2, d: int = 2, epsilon=0.0,
                 classical: bool = False) -> Scenario:
    return Scenario(alphabet ** n_digits, (alphabet,) * n_digits, d, epsilon, classical)


def rac_witness(n_digits: int = 2, alphabet: int = 2) -> Witness:
    """Average success probability of the ``n_digits -> 1`` random access code.

    Input ``x`` encodes the digit string (most significant digit first);
    setting ``y`` asks for digit ``y``.
    """
    if n_digits < 2 or alphabet < 2:
        raise DomainError("a random access code needs at least two digits and two symbols")
    n_x = alphabet ** n_digits
    c = np.zeros((alphabet, n_x, n_digits))
    for x in range(n_x):
        for y, xy in enumerate(digits(x, n_digits, alphabet)):
            c[xy, x, y] += 1.0 / (n_x * n_digits)
    return Witness(c, f"rac{n_digits}x{alphabet}")


def rac_symmetry(scenario: Scenario, n_digits: int = 2, alphabet: int = 2) -> SymmetryGroup:
    """Digit-position permutations and symbol permutations of the first digit.

    Together they generate every relabelling that preserves the random
    access code: permuting positions moves settings with them, and renaming
    the symbols of one digit renames the outcomes of the matching setting.
    """
    n_x = alphabet ** n_digits
    strings = [digits(x, n_digits, alphabet) for x in range(n_x)]
    index = {s: x for x, s in enumerate(strings)}
    ident_b = tuple(range(alphabet))
    positions = [(1, 0) + tuple(range(2, n_digits))]
    if n_digits > 2:
        positions.append(tuple(range(1, n_digits)) + (0,))
    symbols = [(1, 0) + tuple(range(2, alphabet))]
    if alphabet > 2:
        symbols.append(tuple(range(1, alphabet)) + (0,))
    gens = []
    for sigma in positions:
        perm_x = []
        for s in strings:
            image = [0] * n_digits
            for i, v in enumerate(s):
                image[sigma[i]] = v
            perm_x.append(index[tuple(image)])
        gens.append(Relabeling(tuple(perm_x), sigma, (ident_b,) * n_digits))
    for pi in symbols:
        perm_x = tuple(index[(pi[s[0]],) + s[1:]] for s in strings)
        gens.append(Relabeling(perm_x, tuple(range(n_digits)), (pi,) + (ident_b,) * (n_digits - 1)))
    return SymmetryGroup(scenario, gens)


# outcome table for the first three binary settings of the certification task
CERT_TABLE = np.array([[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]])


def cert_scenario(epsilon=0.0, last_outcomes: int = 4, d: int = 2) -> Scenario:
    return Scenario(4, (2, 2, 2, last_outcomes), d, epsilon)


def measurement_cert_witness() -> Witness:
    """Witness rewarding a genuine four-outcome fourth setting.

    ``A = 1/12 sum_{x, y<3} p(t[x, y]|x, y) - 1/5 sum_x p(x|x, 3)``.
    """
    c = np.zeros((4, 4, 4))
    for x in range(4):
        for y in range(3):
            c[CERT_TABLE[x, y], x, y] += 1 / 12
        c[x, x, 3] -= 1 / 5
    return Witness(c, "cert4")


def ternary_cert_witnesses() -> list[Witness]:
    """The certification witness seen through three-outcome fourth settings.

    A three-outcome measurement reports one of four labels through an
    injective relabelling; as its outcomes can be permuted freely, only the
    unused label matters, giving one witness per omitted label.
    """
    full = measurement_cert_witness().coefficients
    out = []
    for omitted in range(4):
        labels = [b for b in range(4) if b != omitted]
        c = np.zeros((3, 4, 4))
        c[:2, :, :3] = full[:2, :, :3]
        for b_new, b_old in enumerate(labels):
            c[b_new, :, 3] = full[b_old, :, 3]
        out.append(Witness(c, f"cert3-omit{omitted}"))
    return out


# --------------------------------------------------------------------------
# hierarchy-based bounds


@dataclass
class BoundResult:
    """Upper bound from one relaxation; ``bound`` includes the solver slack."""

    value: float
    solution: SdpSolution
    size: int
    num_vars: int

    @property
    def bound(self) -> float:
        return self.value + self.solution.slack


def hierarchy_bound(scenario: Scenario, witness: Witness, level=2, settings: SolverSettings | None = None,
                    symmetry=None, extras=()) -> BoundResult:
    """Maximum of ``witness`` over the relaxation at ``level``."""
    from .moments import symmetrize

    monomials = build_monomial_list(scenario, level, extras)
    problem = build_moment_problem(scenario, monomials, objective=witness)
    if symmetry is not None:
        problem = symmetrize(problem, symmetry)
    sol = solve(problem.to_sdp(), settings)
    if not sol.ok:
        return BoundResult(math.inf if sol.status == "unbounded" else math.nan, sol, problem.size,
                           problem.num_vars)
    return BoundResult(sol.dual_value, sol, problem.size, problem.num_vars)


def cert_symmetry(scenario: Scenario, omitted: int | None = None) -> SymmetryGroup:
    """Permutations of the three binary settings, acting on the preparations through the code table.

    Rows of ``CERT_TABLE`` are the even-weight words of length three, so
    permuting coordinates permutes the rows.  The last setting's outcomes
    name preparations and move with them; with a three-outcome last
    setting only preparation ``omitted`` may be unnamed, which is the row
    fixed by every coordinate permutation when ``omitted == 0``.
    """
    rows = [tuple(r) for r in CERT_TABLE]
    last = scenario.n_b[3]
    labels = list(range(4)) if last == 4 else [b for b in range(4) if b != omitted]
    gens = []
    for sigma in [(1, 0, 2), (0, 2, 1)]:
        perm_x = []
        for row in rows:
            image = [0, 0, 0]
            for y in range(3):
                image[sigma[y]] = row[y]
            perm_x.append(rows.index(tuple(image)))
        if any(perm_x[lab] not in labels for lab in labels):
            raise DomainError("the omitted label is not fixed by the setting permutations")
        perm_b3 = tuple(labels.index(perm_x[lab]) for lab in labels)
        gens.append(Relabeling(tuple(perm_x), sigma + (3,), ((0, 1),) * 3 + (perm_b3,)))
    return SymmetryGroup(scenario, gens)


def cert_ternary_bound(epsilon, level="2+RMM", settings=None,
                       omitted: Sequence[int] = (0,)) -> tuple[float, list[BoundResult]]:
    """Largest witness value over omitted-label patterns of the ternary restriction.

    The four patterns are related by an even bit-flip of the binary settings,
    which permutes preparations transitively and leaves the witness
    invariant, so they share one bound and ``omitted=(0,)`` suffices.  Other
    patterns are solved without the setting-permutation symmetry.
    """
    results = []
    witnesses = ternary_cert_witnesses()
    for k in omitted:
        scenario = cert_scenario(epsilon, 3)
        sym = cert_symmetry(scenario, k) if k == 0 else None
        results.append(hierarchy_bound(scenario, witnesses[k], level, settings, symmetry=sym))
    return max(r.value for r in results), results


@dataclass
class GuessResult:
    p_guess: float
    solution: SdpSolution

    @property
    def randomness(self) -> float:
        """Certified min-entropy ``-log2 P_g`` (bits)."""
        return -math.log2(min(1.0, max(self.p_guess, 1e-300)))


def guessing_sdp(scenario: Scenario, witness: Witness, observed: float, guess=(0, 0), level=2,
                 extras=()) -> SdpProblem:
    """The SDP behind ``guessing_probability``.

    The adversary may prepare, for every guess ``e``, a sub-normalised
    strategy of weight ``q_e`` whose outcome at ``(x*, y*)`` is predicted to
    be ``e``; the weights sum to one and the mixture must reproduce the
    observed witness value exactly.
    """
    x_star, y_star = guess
    if not (0 <= x_star < scenario.n_x and 0 <= y_star < scenario.n_y):
        raise DomainError("guessed input outside the scenario")
    monomials = build_monomial_list(scenario, level, extras)
    base = build_moment_problem(scenario, monomials, feasibility=True)
    n_guess = scenario.n_b[y_star]
    parts = [base] * n_guess
    objectives = [base.probability(e, x_star, y_star) for e in range(n_guess)]
    w = base.witness_expression(witness.coefficients)
    return assemble(parts, objectives, rows=[([w] * n_guess, "==", float(observed))], weighted=True)


def guessing_probability(scenario: Scenario, witness: Witness, observed: float, guess=(0, 0), level=2,
                         settings: SolverSettings | None = None, extras=()) -> GuessResult:
    """Upper bound on the probability of guessing the outcome of ``guess = (x*, y*)``."""
    sol = solve(guessing_sdp(scenario, witness, observed, guess, level, extras), settings)
    if sol.status == "infeasible":
        raise DomainError("value outside quantum set at this level")
    if not sol.ok:
        raise _failure(sol)
    return GuessResult(sol.dual_value, sol)


def _failure(sol):
    from .errors import SolverFailure

    return SolverFailure(f"solver returned status {sol.status}: {sol.message}", sol)


# --------------------------------------------------------------------------
# perturbative estimates


def perturbative_bound(witness: Witness, qudit_value: float, epsilons) -> float:
    """Worst-case almost-qudit value implied by a qudit bound."""
    return qudit_value + witness.perturbation_constant(epsilons)


def perturbative_randomness(observed: float, epsilons, x_star: int, qudit_randomness: Callable[[float], float],
                            shift_coefficient: float = 0.5) -> float:
    """Randomness certified by perturbing the qudit analysis.

    The qudit value is at least ``observed - shift_coefficient * sum(eps)``
    (one half for the 2-bit code), the qudit guessing probability follows from
    ``qudit_randomness`` and the almost-qudit one can exceed it by at most
    ``2 eps_{x*}``.  Returns 0 when nothing can be certified.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or not 0 <= x_star < eps.size:
        raise DomainError("give one epsilon per preparation, with x_star among them")
    shifted = observed - shift_coefficient * float(eps.sum())
    r0 = max(0.0, float(qudit_randomness(shifted)))
    p = 2.0 ** (-r0) + 2 * eps[x_star]
    return max(0.0, -math.log2(p)) if p < 1 else 0.0


# --------------------------------------------------------------------------
# closed forms


def rac_epsilon_analytic(epsilon: float) -> float:
    """Success probability of the almost-qubit 2-bit code with the optimal four-level model."""
    if not 0 <= epsilon <= 0.5:
        raise DomainError("the closed form holds for 0 <= epsilon <= 1/2")
    h = (1 - 2 * epsilon) * math.sqrt(1 + 4 * epsilon - 4 * epsilon ** 2)
    return 0.5 + 0.25 * (math.sqrt(1 + h) + math.sqrt(1 - h))


def first_order(epsilon: float) -> float:
    return RAC_QUBIT + epsilon / math.sqrt(2)


def almost_qubit_states(epsilon: float, theta: float = math.pi / 4) -> np.ndarray:
    """Four-level states ``|phi_{x1 x2}>`` as rows, ordered ``x = 2 x1 + x2``.

    Each has weight ``1 - epsilon`` on the first two levels.  With
    ``epsilon = 0`` and ``theta = pi/4`` these are the BB84 states.
    """
    if not 0 <= epsilon <= 1:
        raise DomainError("epsilon must lie in [0, 1]")
    e = np.eye(4)
    a, b = math.sqrt(1 - epsilon), math.sqrt(epsilon)
    c, s = math.cos(theta), math.sin(theta)
    s01p, s01m = c * e[0] + s * e[1], c * e[0] - s * e[1]
    s23p, s23m = c * e[2] + s * e[3], c * e[2] - s * e[3]
    phi = {
        (0, 0): a * e[0] + b * e[2],
        (1, 1): a * e[1] + b * e[3],
        (1, 0): a * s01p - b * s23p,
        (0, 1): a * s01m - b * s23m,
    }
    return np.array([phi[x1, x2] for x1 in range(2) for x2 in range(2)], dtype=complex)


def rac_observables(states: np.ndarray) -> list[np.ndarray]:
    """``O_y = sum_x (-1)^{x_y} |phi_x><phi_x|`` for the 2-bit code."""
    out = []
    for y in range(2):
        O = np.zeros((states.shape[1],) * 2, dtype=complex)
        for x, v in enumerate(states):
            sign = (-1) ** digits(x, 2, 2)[y]
            O += sign * np.outer(v, v.conj())
        out.append(O)
    return out


def rac_value_optimal_measurement(states: np.ndarray) -> float:
    """``1/2 + 1/8 sum_y lambda_+(O_y)`` with ``lambda_+`` the positive-eigenvalue sum."""
    total = 0.0
    for O in rac_observables(states):
        w = np.linalg.eigvalsh(O)
        total += w[w > 0].sum()
    return 0.5 + total / 8


def coherent_state_epsilon(alpha: complex) -> float:
    """``1 - exp(-|alpha|) (1 + |alpha|^2)``, the deviation quoted for weak coherent pulses."""
    r = abs(alpha)
    return 1 - math.exp(-r) * (1 + r * r)


def coherent_state_fock_weight(alpha: complex) -> float:
    """Weight of a coherent state outside ``span{|0>, |1>}``, from its photon-number amplitudes."""
    r2 = abs(alpha) ** 2
    # 1 - e^{-r2}(1 + r2) evaluated without cancellation
    return -math.expm1(-r2) - r2 * math.exp(-r2)


# --------------------------------------------------------------------------
# curves


def upper_concave_envelope(points: Sequence[tuple[float, float]]) -> np.ndarray:
    """Vertices of the upper concave envelope of ``(x, y)`` points, sorted by ``x``."""
    pts = sorted(set((float(a), float(b)) for a, b in points))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while hull and hull[-1][0] == p[0]:
            hull.pop()
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return np.array(hull)


def envelope_value(hull: np.ndarray, x: float) -> float:
    return float(np.interp(x, hull[:, 0], hull[:, 1]))


def deterministic_optimum(scenario_n_x: int, n_b: Sequence[int], witness: Witness, dim: int = 2) -> float:
    """Best value over deterministic strategies sending one of ``dim`` classical messages.

    Enumerates encodings ``x -> m`` and, for each setting and message, picks the
    best outcome.
    """
    c = witness.coefficients
    best = -math.inf
    for enc in itertools.product(range(dim), repeat=scenario_n_x):
        total = 0.0
        for y, nb in enumerate(n_b):
            for m in range(dim):
                xs = [x for x in range(scenario_n_x) if enc[x] == m]
                if xs:
                    total += max(c[b, xs, y].sum() for b in range(nb))
        best = max(best, total)
    return best
