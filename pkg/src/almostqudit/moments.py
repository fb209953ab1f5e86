"""Tracial moment relaxations of almost-qudit prepare-and-measure scenarios.

A relaxation is fixed by a :class:`Scenario` and a list of monomials.  Every
entry ``Tr(u v^dagger)`` of the moment matrix is mapped to the variable of
its trace class, and the constraints

* ``Tr(rho_x) = 1``,  ``Tr(V) = d``,  ``Tr(1) >= d``,
* ``Tr(rho_x V) >= 1 - eps_x``

are attached.  Linear expressions are dictionaries ``{var: coef}`` in which
the key ``None`` stands for the normalisation (the constant 1, or the weight
of a sub-normalised block when several problems are combined).
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ResourceError
from .opalg import (IDENTITY, SUBSPACE, Kind, Monomial, OperatorSymbol, TraceWord, canonicalize,
                    check_symbol, measurement, parse_symbol, state, trace_class, trace_word)
from .sdp import SdpBlock, SdpProblem

DEFAULT_MAX_MONOMIALS = 5000


@dataclass(frozen=True)
class Scenario:
    """Shape of a prepare-and-measure experiment.

    Parameters
    ----------
    n_x : int
        Number of preparations.
    n_b : tuple of int
        Outcome count of every measurement setting.
    d : int
        Dimension of the qudit subspace.
    epsilons : float or tuple of float
        Allowed weight outside the subspace, per preparation (a scalar is
        broadcast).
    classical : bool
        Impose commutation among states and among measurement elements.
    """

    n_x: int
    n_b: tuple
    d: int = 2
    epsilons: tuple = 0.0
    classical: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_b", tuple(int(b) for b in self.n_b))
        eps = self.epsilons
        if np.isscalar(eps):
            eps = (float(eps),) * self.n_x
        object.__setattr__(self, "epsilons", tuple(float(e) for e in eps))
        if self.n_x < 1 or not self.n_b:
            raise DomainError("a scenario needs at least one preparation and one setting")
        if any(b < 2 for b in self.n_b):
            raise DomainError("every setting needs at least two outcomes")
        if len(self.epsilons) != self.n_x:
            raise DomainError("one epsilon per preparation is required")
        if any(not 0.0 <= e <= 1.0 for e in self.epsilons):
            raise DomainError("epsilons must lie in [0, 1]")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("d must be a positive integer")

    @property
    def n_y(self) -> int:
        return len(self.n_b)

    @property
    def absorbing(self) -> frozenset:
        """Preparations confined to the subspace; they satisfy ``V rho_x = rho_x``."""
        return frozenset(x for x, e in enumerate(self.epsilons) if e == 0.0)

    @property
    def rules(self) -> dict:
        """Keyword arguments selecting this scenario's rewriting rules in ``opalg``."""
        return {"classical": self.classical, "absorbing": self.absorbing}

    def with_epsilon(self, eps) -> "Scenario":
        return Scenario(self.n_x, self.n_b, self.d, eps, self.classical)

    def with_d(self, d: int) -> "Scenario":
        return Scenario(self.n_x, self.n_b, d, self.epsilons, self.classical)

    def generators(self) -> list[OperatorSymbol]:
        """``V``, the states, and all measurement elements except the last outcome."""
        out = [SUBSPACE] + [state(x) for x in range(self.n_x)]
        for y, nb in enumerate(self.n_b):
            out += [measurement(y, b) for b in range(nb - 1)]
        return out


# --------------------------------------------------------------------------
# monomial lists

_LETTER_KIND = {"V": Kind.SUBSPACE, "R": Kind.STATE, "r": Kind.STATE, "ρ": Kind.STATE,
                "M": Kind.MEASUREMENT}


def parse_level(level) -> tuple[int, list[str]]:
    """Split a level spec such as ``2`` or ``"2+RVM+MRV"`` into base and patterns."""
    if isinstance(level, (int, np.integer)):
        return int(level), []
    parts = [p.strip() for p in str(level).split("+")]
    if not parts[0].isdigit():
        raise DomainError(f"level spec {level!r} must start with an integer")
    base = int(parts[0])
    patterns = [p for p in parts[1:] if p]
    for p in patterns:
        if any(ch not in _LETTER_KIND for ch in p):
            raise DomainError(f"pattern {p!r} may only use the letters V, R (or r, ρ) and M")
    if base < 0:
        raise DomainError("level must be nonnegative")
    return base, patterns


def _pattern_words(scenario, pattern):
    gens = scenario.generators()
    pools = [[g for g in gens if g.kind == _LETTER_KIND[ch]] for ch in pattern]
    return itertools.product(*pools)


def _parse_word(text):
    return tuple(parse_symbol(tok) for tok in text.split())


def build_monomial_list(scenario: Scenario, level=2, extras: Iterable = (),
                        max_monomials: int = DEFAULT_MAX_MONOMIALS) -> list[Monomial]:
    """Monomials indexing the moment matrix.

    Level ``k`` holds every nonzero canonical word of length at most ``k`` in
    the generators (the last outcome of each setting is left out, being
    ``1 - sum`` of the others).  A string level ``"k+P1+P2"`` adds, for each
    letter pattern ``P`` over ``V``, ``R`` and ``M``, every word matching it.
    ``extras`` are further explicit words (sequences of symbols or strings
    like ``"r0 V M0|1"``).
    """
    base, patterns = parse_level(level)
    gens = scenario.generators()
    out = [Monomial((IDENTITY,))]
    seen = {out[0]}

    def add(word):
        mono = canonicalize(word, **scenario.rules)
        if mono.zero or mono in seen:
            return
        seen.add(mono)
        out.append(mono)
        if len(out) > max_monomials:
            raise ResourceError(f"monomial list exceeds the cap of {max_monomials}")

    for length in range(1, base + 1):
        for word in itertools.product(gens, repeat=length):
            if any(s == t for s, t in zip(word, word[1:])):
                continue
            add(word)
    for pattern in patterns:
        for word in _pattern_words(scenario, pattern):
            add(word)
    for word in extras:
        if isinstance(word, str):
            word = _parse_word(word)
        word = tuple(word)
        for sym in word:
            check_symbol(sym, scenario.n_x, scenario.n_b)
        add(word)
    return out


# --------------------------------------------------------------------------
# the moment problem


def _add(expr, other, scale=1.0):
    for k, v in other.items():
        expr[k] = expr.get(k, 0.0) + scale * v
    return expr


def _clean(expr, tol=1e-14):
    return {k: v for k, v in expr.items() if abs(v) > tol}


@dataclass
class Constraint:
    expr: dict
    relation: str  # ">=" or "==", against zero

    def key(self):
        return tuple(sorted(((-1 if k is None else k), round(v, 12)) for k, v in self.expr.items())), self.relation


@dataclass
class MomentProblem:
    """Symbolic relaxation: moment matrix layout, constraints, objective.

    ``re_index[i, j]`` is the variable holding ``Re Gamma_ij`` (``-1`` for a
    vanishing entry).  With complex moments, ``im_index``/``im_sign`` give the
    imaginary part (``Im Gamma_ij = im_sign * y[im_index]``).
    """

    scenario: Scenario
    monomials: list
    re_index: np.ndarray
    labels: list
    classes: list
    constraints: list
    objective: dict | None = None
    im_index: np.ndarray | None = None
    im_sign: np.ndarray | None = None
    word_index: dict = field(default_factory=dict)
    open_moments: bool = False

    @property
    def num_vars(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.monomials)

    @property
    def is_complex(self) -> bool:
        return self.im_index is not None

    # --- expressions -------------------------------------------------------
    def moment(self, word) -> dict:
        """Expression for ``Re Tr(word)``.

        The word's class must occur in the matrix, unless the problem has
        ``open_moments`` set: then an absent class becomes a fresh variable
        that no block constrains.
        """
        tw = trace_word(word, **self.scenario.rules)
        if tw.zero:
            return {}
        rep = tw.representative
        if rep not in self.word_index:
            if not self.open_moments:
                raise DomainError(f"moment {tw} does not occur in this relaxation")
            self.word_index[rep] = len(self.labels)
            self.labels.append(f"Re {tw}")
            self.classes.append((tw, "re"))
        return {self.word_index[rep]: 1.0}

    def probability(self, b: int, x: int, y: int) -> dict:
        """``p(b|x,y)`` as a linear expression (last outcome via completeness)."""
        nb = self.scenario.n_b[y]
        if not 0 <= b < nb:
            raise DomainError(f"outcome {b} outside 0..{nb - 1}")
        if b < nb - 1:
            return self.moment((state(x), measurement(y, b)))
        expr = {None: 1.0}
        for bb in range(nb - 1):
            _add(expr, self.moment((state(x), measurement(y, bb))), -1.0)
        return expr

    def witness_expression(self, coefficients) -> dict:
        """``sum c[b, x, y] p(b|x,y)`` for a coefficient array indexed ``[b, x, y]``."""
        c = np.asarray(coefficients, dtype=float)
        sc = self.scenario
        if c.ndim != 3 or c.shape[1] != sc.n_x or c.shape[2] != sc.n_y or c.shape[0] < max(sc.n_b):
            raise DomainError("witness shape does not match the scenario")
        expr = {}
        for y, nb in enumerate(sc.n_b):
            for x in range(sc.n_x):
                for b in range(nb):
                    if c[b, x, y] != 0:
                        _add(expr, self.probability(b, x, y), c[b, x, y])
        return _clean(expr)

    def fixed_values(self) -> dict:
        """Variables pinned by single-variable equalities, with their values."""
        out = {}
        for con in self.constraints:
            keys = [k for k in con.expr if k is not None]
            if con.relation == "==" and len(keys) == 1:
                out[keys[0]] = -con.expr.get(None, 0.0) / con.expr[keys[0]]
        return out

    # --- numerical assignment ----------------------------------------------
    def assignment(self, operators: dict, dim: int) -> np.ndarray:
        """Variable values realised by concrete operators (``symbol -> matrix``).

        The last outcome of each setting is not needed; the identity is added.
        """
        from .opalg import evaluate

        y = np.zeros(self.num_vars)
        for v, (tw, part) in enumerate(self.classes):
            val = np.trace(evaluate(tw.representative.letters, operators, dim))
            y[v] = val.real if part == "re" else val.imag
        return y

    # --- output ------------------------------------------------------------
    def to_sdp(self) -> SdpProblem:
        """Single-block SDP with the objective (zero objective for feasibility)."""
        objective = self.objective if self.objective is not None else {}
        return assemble([self], [objective], weighted=False)


def _entry_tables(monomials, rules, complex_moments):
    n = len(monomials)
    re_index = np.full((n, n), -1, dtype=np.int64)
    im_index = np.full((n, n), -1, dtype=np.int64) if complex_moments else None
    im_sign = np.zeros((n, n), dtype=np.int8) if complex_moments else None
    word_index = {}
    im_word_index = {}
    labels, classes = [], []
    for i in range(n):
        for j in range(i, n):
            tw = trace_class(monomials[i], monomials[j], **rules)
            if tw.zero:
                continue
            rep = tw.representative
            v = word_index.get(rep)
            if v is None:
                v = word_index[rep] = len(labels)
                labels.append(f"Re {tw}")
                classes.append((tw, "re"))
            re_index[i, j] = re_index[j, i] = v
            if complex_moments and not tw.real:
                w = im_word_index.get(rep)
                if w is None:
                    w = im_word_index[rep] = len(labels)
                    labels.append(f"Im {tw}")
                    classes.append((TraceWord(rep, False, False), "im"))
                s = -1 if tw.conjugated else 1
                im_index[i, j], im_sign[i, j] = w, s
                im_index[j, i], im_sign[j, i] = w, -s
    return re_index, im_index, im_sign, word_index, labels, classes


def anchored(mono: Monomial) -> bool:
    """Whether a word contains a state or ``V``, so that its moments are bounded."""
    return any(sym.kind in (Kind.STATE, Kind.SUBSPACE) for sym in mono.letters)


def build_moment_problem(scenario: Scenario, monomials: Sequence[Monomial], behavior=None,
                         objective=None, feasibility: bool = False,
                         complex_moments: bool = False, facial_reduction: bool = True) -> MomentProblem:
    """Moment relaxation over ``monomials``.

    Parameters
    ----------
    behavior : object with ``probabilities`` array ``[b, x, y]``, optional
        Fixes ``p(b|x,y)`` to the observed values.
    objective : witness or coefficient array or expression dict, optional
        Linear functional to maximise.
    feasibility : bool
        Allow neither behaviour nor objective (pure feasibility question).
    complex_moments : bool
        Keep imaginary parts and realise the Hermitian matrix by real doubling.
        The real relaxation is already exact for real objectives, so this is
        mainly a cross-check.
    facial_reduction : bool
        Drop the identity and every word made of measurement elements only.
        Their moments can be inflated at will (add a block where ``V`` and all
        states vanish), so every dual certificate is zero on those rows; the
        bound is unchanged but the reduced problem has a strictly feasible
        dual and solves to full accuracy.
    """
    if behavior is None and objective is None and not feasibility:
        raise DomainError("give a behaviour, an objective, or ask for feasibility")
    monomials = list(monomials)
    if not monomials or len(set(monomials)) != len(monomials):
        raise DomainError("monomials must be a nonempty list without duplicates")
    for mono in monomials:
        if mono.zero:
            raise DomainError("zero monomial in the list")
        for sym in mono.letters:
            check_symbol(sym, scenario.n_x, scenario.n_b)
    if facial_reduction:
        monomials = [m for m in monomials if anchored(m)]
        if not monomials:
            raise DomainError("no monomial contains a state or V")
    re_index, im_index, im_sign, word_index, labels, classes = _entry_tables(
        monomials, scenario.rules, complex_moments)
    problem = MomentProblem(scenario, monomials, re_index, labels, classes, [], None,
                            im_index, im_sign, word_index, open_moments=facial_reduction)

    cons = problem.constraints
    if not facial_reduction:
        one = problem.moment(())
        if not one:
            raise DomainError("the identity monomial is required")
        cons.append(Constraint(_add(dict(one), {None: -float(scenario.d)}), ">="))
    cons.append(Constraint(_add(problem.moment((SUBSPACE,)), {None: -float(scenario.d)}), "=="))
    for x in range(scenario.n_x):
        rho = state(x)
        cons.append(Constraint(_add(problem.moment((rho,)), {None: -1.0}), "=="))
        cons.append(Constraint(_add(problem.moment((rho, SUBSPACE)),
                                    {None: -(1.0 - scenario.epsilons[x])}), ">="))
    if behavior is not None:
        p = np.asarray(getattr(behavior, "probabilities", behavior), dtype=float)
        _check_behavior(p, scenario)
        for y, nb in enumerate(scenario.n_b):
            for x in range(scenario.n_x):
                for b in range(nb - 1):
                    expr = _add(problem.probability(b, x, y), {None: -p[b, x, y]})
                    cons.append(Constraint(expr, "=="))
    if objective is not None:
        if isinstance(objective, dict):
            problem.objective = dict(objective)
        else:
            coeffs = getattr(objective, "coefficients", objective)
            problem.objective = problem.witness_expression(coeffs)
    return problem


def _check_behavior(p, scenario, tol=1e-9):
    if p.ndim != 3 or p.shape[1:] != (scenario.n_x, scenario.n_y) or p.shape[0] < max(scenario.n_b):
        raise DomainError("behaviour shape does not match the scenario")
    for y, nb in enumerate(scenario.n_b):
        block = p[:nb, :, y]
        if np.any(block < -tol):
            raise DomainError("behaviour has negative probabilities")
        if np.any(np.abs(block.sum(axis=0) - 1) > tol):
            raise DomainError(f"behaviour is not normalised for setting {y}")


# --------------------------------------------------------------------------
# assembly into a block SDP


def assemble(problems: Sequence[MomentProblem], objectives: Sequence[dict], rows=(),
             weighted: bool = False) -> SdpProblem:
    """Stack moment problems into one SDP.

    With ``weighted=False`` the normalisation key ``None`` is the constant 1
    (only meaningful for a single problem).  With ``weighted=True`` each
    problem ``k`` gets its own weight variable ``q_k`` (appended after all
    moment variables) standing for ``None``, with ``sum_k q_k = 1``; the
    moment blocks are then sub-normalised.

    ``rows`` are extra joint constraints ``(list_of_exprs, relation, bound)``
    whose ``k``-th expression refers to the variables of problem ``k``.
    """
    offsets = np.cumsum([0] + [p.num_vars for p in problems])
    n_moment = int(offsets[-1])
    num_vars = n_moment + (len(problems) if weighted else 0)
    objective = np.zeros(num_vars)
    offset = 0.0
    lin_r, lin_c, lin_v, rels, bounds = [], [], [], [], []

    def place(k, expr, row, coefs, scale=1.0):
        """Add ``scale * expr`` (of problem k) to a coefficient container; returns the constant."""
        const = 0.0
        for var, val in expr.items():
            if var is None:
                if weighted:
                    coefs(n_moment + k, scale * val)
                else:
                    const += scale * val
            else:
                coefs(offsets[k] + var, scale * val)
        return const

    def row_adder(r):
        def add(col, val):
            lin_r.append(r), lin_c.append(col), lin_v.append(val)
        return add

    def obj_adder(col, val):
        objective[col] += val

    blocks = []
    for k, (prob, obj) in enumerate(zip(problems, objectives)):
        offset += place(k, obj, None, obj_adder)
        for con in prob.constraints:
            r = len(rels)
            const = place(k, con.expr, r, row_adder(r))
            rels.append(con.relation)
            bounds.append(-const)
        blocks.append(_moment_block(prob, offsets[k]))
    for exprs, relation, bound in rows:
        r = len(rels)
        const = 0.0
        for k, expr in enumerate(exprs):
            if expr:
                const += place(k, expr, r, row_adder(r))
        rels.append(relation)
        bounds.append(bound - const)
    if weighted:
        r = len(rels)
        for k in range(len(problems)):
            row_adder(r)(n_moment + k, 1.0)
        rels.append("==")
        bounds.append(1.0)
    rows_m = sp.csr_matrix((lin_v, (lin_r, lin_c)), shape=(len(rels), num_vars))
    names = [f"[{k}] {lab}" for k, p in enumerate(problems) for lab in p.labels]
    if weighted:
        names += [f"q{k}" for k in range(len(problems))]
    return SdpProblem(num_vars, objective, blocks, offset, rows_m, rels, np.array(bounds), names)


def _moment_block(prob: MomentProblem, shift: int) -> SdpBlock:
    n = prob.size
    iu, ju = np.triu_indices(n)
    v = prob.re_index[iu, ju]
    keep = v >= 0
    iu, ju, v = iu[keep], ju[keep], v[keep]
    if not prob.is_complex:
        return SdpBlock(n, v + shift, iu, ju, np.ones(len(v)))
    # [[Re, -Im], [Im, Re]]
    rows = [iu, iu + n]
    cols = [ju, ju + n]
    vars_ = [v, v]
    vals = [np.ones(len(v)), np.ones(len(v))]
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    w = prob.im_index[ii, jj]
    s = prob.im_sign[ii, jj]
    keep = w >= 0
    # upper-right block entry (i, n + j) holds -Im Gamma_ij
    rows.append(ii[keep])
    cols.append(jj[keep] + n)
    vars_.append(w[keep])
    vals.append(-s[keep].astype(float))
    return SdpBlock(2 * n, np.concatenate(vars_) + shift, np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals))


# --------------------------------------------------------------------------
# symmetry


@dataclass(frozen=True)
class Relabeling:
    """Simultaneous relabelling of preparations, settings and outcomes.

    ``x -> perm_x[x]``, ``y -> perm_y[y]`` and outcome ``b`` of setting ``y``
    goes to ``perm_b[y][b]`` (of setting ``perm_y[y]``).
    """

    perm_x: tuple
    perm_y: tuple
    perm_b: tuple

    @classmethod
    def identity(cls, scenario):
        return cls(tuple(range(scenario.n_x)), tuple(range(scenario.n_y)),
                   tuple(tuple(range(nb)) for nb in scenario.n_b))

    def symbol(self, sym: OperatorSymbol) -> OperatorSymbol:
        if sym.kind == Kind.STATE:
            return state(self.perm_x[sym.a])
        if sym.kind == Kind.MEASUREMENT:
            return measurement(self.perm_y[sym.a], self.perm_b[sym.a][sym.b])
        return sym

    def check(self, scenario):
        if sorted(self.perm_x) != list(range(scenario.n_x)):
            raise DomainError("perm_x is not a permutation of the preparations")
        if sorted(self.perm_y) != list(range(scenario.n_y)):
            raise DomainError("perm_y is not a permutation of the settings")
        for y, nb in enumerate(scenario.n_b):
            if scenario.n_b[self.perm_y[y]] != nb or sorted(self.perm_b[y]) != list(range(nb)):
                raise DomainError(f"outcome relabelling of setting {y} is invalid")
        for x in range(scenario.n_x):
            if scenario.epsilons[x] != scenario.epsilons[self.perm_x[x]]:
                raise DomainError("relabelling mixes preparations with different epsilons")


@dataclass
class SymmetryGroup:
    """Group generated by a list of relabellings of one scenario."""

    scenario: Scenario
    generators: list

    def __post_init__(self):
        for g in self.generators:
            g.check(self.scenario)


def _expand(letters, g: Relabeling, scenario: Scenario) -> dict:
    """Image of a word under ``g`` as ``{letters: coef}``, last outcomes expanded."""
    terms = {(): 1.0}
    for sym in letters:
        img = g.symbol(sym)
        if img.kind == Kind.MEASUREMENT and img.b == scenario.n_b[img.a] - 1:
            options = [((), 1.0)] + [((measurement(img.a, b),), -1.0) for b in range(img.b)]
        else:
            options = [((img,), 1.0)]
        new = {}
        for word, c in terms.items():
            for extra, c2 in options:
                key = word + extra
                new[key] = new.get(key, 0.0) + c * c2
        terms = new
    return terms


def _image_expr(problem: MomentProblem, v: int, g: Relabeling) -> dict | None:
    """Linear expression for the image of variable ``v``; ``None`` if it leaves the relaxation."""
    tw, part = problem.classes[v]
    expr = {}
    for word, c in _expand(tw.representative.letters, g, problem.scenario).items():
        img = trace_word(word, **problem.scenario.rules)
        if img.zero:
            continue
        if part == "im":
            if img.real:
                continue
            target = _im_var(problem, img.representative)
            c = -c if img.conjugated else c
        else:
            target = problem.word_index.get(img.representative)
        if target is None:
            return None
        expr[target] = expr.get(target, 0.0) + c
    return _clean(expr)


def _im_var(problem, rep):
    for v, (tw, part) in enumerate(problem.classes):
        if part == "im" and tw.representative == rep:
            return v
    return None


def _check_closure(problem: MomentProblem, g: Relabeling):
    known = set(problem.monomials)
    for mono in problem.monomials:
        for word in _expand(mono.letters, g, problem.scenario):
            img = canonicalize(word, **problem.scenario.rules)
            if not img.zero and img not in known:
                raise DomainError(f"monomial list is not closed under the relabelling ({mono} -> {img})")


def _substitute_fixed(expr, fixed):
    out = {}
    for k, v in expr.items():
        if k is not None and k in fixed:
            out[None] = out.get(None, 0.0) + v * fixed[k]
        else:
            out[k] = out.get(k, 0.0) + v
    return _clean(out, 1e-12)


def symmetrize(problem: MomentProblem, group: SymmetryGroup) -> MomentProblem:
    """Restrict to relabelling-invariant moments by variable elimination.

    Variables whose images coincide are merged; images that are linear
    combinations (through the completeness relation) become equality
    constraints.  Because the feasible set and objective are invariant, the
    group average of any optimum is an invariant optimum, so the value is
    unchanged.
    """
    if group.scenario != problem.scenario:
        raise DomainError("symmetry group belongs to a different scenario")
    fixed = problem.fixed_values()
    images = []
    for g in group.generators:
        _check_closure(problem, g)
        imgs = [_image_expr(problem, v, g) for v in range(problem.num_vars)]
        images.append(imgs)
        if problem.objective is not None:
            moved = {}
            for var, c in problem.objective.items():
                if var is None:
                    _add(moved, {None: c})
                elif imgs[var] is None:
                    raise DomainError("objective leaves the relaxation under a generator")
                else:
                    _add(moved, imgs[var], c)
            a = _substitute_fixed(moved, fixed)
            b = _substitute_fixed(problem.objective, fixed)
            if set(a) != set(b) or any(abs(a[k] - b[k]) > 1e-9 for k in a):
                raise DomainError("generator does not leave the objective invariant")

    parent = list(range(problem.num_vars))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    extra = []
    for imgs in images:
        for v, img in enumerate(imgs):
            if img is None:
                continue
            if len(img) == 1 and next(iter(img.values())) == 1.0:
                a, b = find(v), find(next(iter(img)))
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                extra.append(_add({v: -1.0}, img))

    roots = sorted({find(v) for v in range(problem.num_vars)})
    new_id = {r: i for i, r in enumerate(roots)}
    remap = np.array([new_id[find(v)] for v in range(problem.num_vars)], dtype=np.int64)

    def remap_expr(expr):
        out = {}
        for k, v in expr.items():
            key = None if k is None else int(remap[k])
            out[key] = out.get(key, 0.0) + v
        return _clean(out)

    cons, seen = [], set()
    for con in list(problem.constraints) + [Constraint(e, "==") for e in extra]:
        new = Constraint(remap_expr(con.expr), con.relation)
        if not new.expr:
            continue
        key = new.key()
        if key in seen:
            continue
        seen.add(key)
        cons.append(new)

    re_index = np.where(problem.re_index >= 0, remap[np.maximum(problem.re_index, 0)], -1)
    im_index = None
    if problem.is_complex:
        im_index = np.where(problem.im_index >= 0, remap[np.maximum(problem.im_index, 0)], -1)
    labels = [problem.labels[r] for r in roots]
    classes = [problem.classes[r] for r in roots]
    word_index = {rep: int(remap[v]) for rep, v in problem.word_index.items()}
    objective = remap_expr(problem.objective) if problem.objective is not None else None
    return MomentProblem(problem.scenario, problem.monomials, re_index, labels, classes, cons, objective,
                         im_index, problem.im_sign, word_index)


def parse_relabeling(spec: dict, scenario: Scenario) -> Relabeling:
    """Relabelling from a config mapping with optional ``x``, ``y`` and ``b`` lists."""
    ident = Relabeling.identity(scenario)
    perm_x = tuple(spec.get("x", ident.perm_x))
    perm_y = tuple(spec.get("y", ident.perm_y))
    perm_b = spec.get("b", ident.perm_b)
    if perm_b and not isinstance(perm_b[0], (list, tuple)):
        raise DomainError("'b' must list one outcome permutation per setting")
    return Relabeling(perm_x, perm_y, tuple(tuple(p) for p in perm_b))


def word_from_text(text: str):
    """Parse ``"r0 V M1|0"`` into a tuple of symbols."""
    return _parse_word(re.sub(r"[,*]", " ", text))
