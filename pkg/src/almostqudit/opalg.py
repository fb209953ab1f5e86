"""Operator words over the prepare-and-measure alphabet and their canonical forms.

Every symbol is a Hermitian projector: the identity, the auxiliary subspace
projector ``V``, pure states ``rho_x`` and projective measurement elements
``M_{b|y}``.  Words are reduced with

* idempotence  (``PP = P``),
* orthogonality of distinct outcomes of one setting (``M_{b|y} M_{b'|y} = 0``),
* optional commutation of all states with each other and all measurement
  elements with each other (classical mode),
* optional absorption ``V rho_x = rho_x V = rho_x`` for states lying inside the
  subspace (``eps_x = 0``), an exact identity that keeps moment matrices
  from being singular by construction,

and trace words are further identified under cyclic rotation and reversal.
All indices are zero-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError


class Kind(IntEnum):
    IDENTITY = 0
    SUBSPACE = 1
    STATE = 2
    MEASUREMENT = 3


class OperatorSymbol(NamedTuple):
    """A self-adjoint generator.

    ``a`` is the preparation index for states and the setting for measurement
    elements; ``b`` is the outcome.  Tuple ordering (kind, a, b) is the total
    order used to pick representatives.
    """

    kind: Kind
    a: int = 0
    b: int = 0

    def __str__(self):
        if self.kind == Kind.IDENTITY:
            return "1"
        if self.kind == Kind.SUBSPACE:
            return "V"
        if self.kind == Kind.STATE:
            return f"r{self.a}"
        return f"M{self.b}|{self.a}"


IDENTITY = OperatorSymbol(Kind.IDENTITY)
SUBSPACE = OperatorSymbol(Kind.SUBSPACE)


def state(x: int) -> OperatorSymbol:
    return OperatorSymbol(Kind.STATE, x, 0)


def measurement(y: int, b: int) -> OperatorSymbol:
    """The element ``M_{b|y}``."""
    return OperatorSymbol(Kind.MEASUREMENT, y, b)


def parse_symbol(text: str) -> OperatorSymbol:
    """Inverse of ``str(symbol)``: ``"1"``, ``"V"``, ``"r3"``, ``"M0|2"``."""
    text = text.strip()
    if text == "1":
        return IDENTITY
    if text == "V":
        return SUBSPACE
    if text[:1] in ("r", "ρ") and text[1:].isdigit():
        return state(int(text[1:]))
    if text[:1] == "M" and "|" in text:
        b, y = text[1:].split("|")
        return measurement(int(y), int(b))
    raise DomainError(f"unrecognised operator symbol {text!r}")


def check_symbol(sym: OperatorSymbol, n_x: int, n_b: Sequence[int]) -> None:
    if sym.kind == Kind.STATE and not 0 <= sym.a < n_x:
        raise DomainError(f"state index {sym.a} outside 0..{n_x - 1}")
    if sym.kind == Kind.MEASUREMENT:
        if not 0 <= sym.a < len(n_b):
            raise DomainError(f"setting index {sym.a} outside 0..{len(n_b) - 1}")
        if not 0 <= sym.b < n_b[sym.a]:
            raise DomainError(f"outcome {sym.b} outside 0..{n_b[sym.a] - 1} for setting {sym.a}")


def orthogonal(s: OperatorSymbol, t: OperatorSymbol) -> bool:
    return (s.kind == Kind.MEASUREMENT and t.kind == Kind.MEASUREMENT
            and s.a == t.a and s.b != t.b)


def _commute_key(sym: OperatorSymbol, classical: bool):
    # runs of symbols sharing a key may be freely reordered
    if classical and sym.kind in (Kind.STATE, Kind.MEASUREMENT):
        return sym.kind
    return sym


@dataclass(frozen=True)
class Monomial:
    """A reduced word; ``zero`` marks words annihilated by orthogonality."""

    word: tuple[OperatorSymbol, ...]
    zero: bool = False

    def __len__(self):
        return 0 if self.is_identity else len(self.word)

    @property
    def is_identity(self) -> bool:
        return self.word == (IDENTITY,)

    @property
    def letters(self) -> tuple[OperatorSymbol, ...]:
        """The word without the identity placeholder."""
        return () if self.is_identity else self.word

    def adjoint(self) -> "Monomial":
        return Monomial(tuple(reversed(self.word)), self.zero)

    def __str__(self):
        if self.zero:
            return "0"
        return " ".join(str(s) for s in self.word)


ZERO = Monomial((), True)
ONE = Monomial((IDENTITY,))


def _runs(word, classical):
    out = []
    for sym in word:
        key = _commute_key(sym, classical)
        if out and out[-1][0] == key:
            out[-1][1].add(sym)
        else:
            out.append((key, {sym}))
    return out


def _block_vanishes(block) -> bool:
    ms = [s for s in block if s.kind == Kind.MEASUREMENT]
    return any(orthogonal(s, t) for i, s in enumerate(ms) for t in ms[i + 1:])


def _absorbed_at(letters, i, absorbing, classical, cyclic=False) -> bool:
    """Whether the ``V`` at position ``i`` is swallowed by a neighbouring state.

    In classical mode states commute, so the whole run of states next to ``V``
    counts as its neighbour.
    """
    n = len(letters)
    for step in (-1, 1):
        j = i + step
        while True:
            if cyclic:
                j %= n
                if j == i:
                    break
            elif not 0 <= j < n:
                break
            t = letters[j]
            if t.kind != Kind.STATE:
                break
            if t.a in absorbing:
                return True
            if not classical:
                break
            j += step
    return False


def _drop_absorbed(letters, absorbing, classical):
    if not absorbing:
        return letters
    return [s for i, s in enumerate(letters)
            if not (s.kind == Kind.SUBSPACE and _absorbed_at(letters, i, absorbing, classical))]


def reduce_word(word: Iterable[OperatorSymbol], classical: bool = False, absorbing=()):
    """Reduced letters of ``word`` as a tuple, or ``None`` if it vanishes."""
    letters = [s for s in word if s.kind != Kind.IDENTITY]
    while True:
        out = []
        for _, block in _runs(_drop_absorbed(letters, absorbing, classical), classical):
            if _block_vanishes(block):
                return None
            out.extend(sorted(block))
        if out == letters:
            break
        letters = out
    for s, t in zip(out, out[1:]):
        if orthogonal(s, t):
            return None
    return tuple(out)


def canonicalize(word: Iterable[OperatorSymbol], classical: bool = False,
                 scenario=None, absorbing=()) -> Monomial:
    """Reduce ``word`` to its canonical monomial.

    Identity letters are dropped, adjacent equal letters collapse, adjacent
    distinct outcomes of one setting give the zero monomial.  In classical
    mode maximal runs of states (or of measurement elements) are sorted first.
    ``V`` letters next to a state whose index is in ``absorbing`` are removed.
    With ``scenario`` given, symbol indices are range-checked.
    """
    word = tuple(word)
    if scenario is not None:
        for sym in word:
            check_symbol(sym, scenario.n_x, scenario.n_b)
    reduced = reduce_word(word, classical, absorbing)
    if reduced is None:
        return ZERO
    return Monomial(reduced or (IDENTITY,))


@dataclass(frozen=True)
class TraceWord:
    """Canonical class of ``Tr(w)`` under cyclicity and adjoint reversal.

    ``conjugated`` records that the representative was reached through the
    reversal, so ``Tr(w) = conj(Tr(representative))``.  ``real`` marks classes
    whose trace is forced real.  Equality only looks at the representative.
    """

    representative: Monomial
    conjugated: bool = field(default=False, compare=False)
    real: bool = field(default=True, compare=False)

    @property
    def zero(self) -> bool:
        return self.representative.zero

    def __str__(self):
        return f"Tr[{self.representative}]"


def _cyclic_blocks(letters, classical):
    runs = _runs(letters, classical)
    if len(runs) > 1 and runs[0][0] == runs[-1][0]:
        merged = runs[0][1] | runs[-1][1]
        runs = [(runs[0][0], merged)] + runs[1:-1]
    blocks = []
    for _, block in runs:
        if _block_vanishes(block):
            return None
        blocks.append(tuple(sorted(block)))
    if len(blocks) > 1 and orthogonal(blocks[-1][-1], blocks[0][0]):
        return None
    return blocks


def trace_word(word: Iterable[OperatorSymbol], classical: bool = False, absorbing=()) -> TraceWord:
    """Canonical trace class of a single word."""
    letters = reduce_word(word, classical, absorbing)
    # the ends of a trace word are adjacent too: rotate a swallowed V to the
    # front and drop it
    while letters and absorbing:
        hit = [i for i, s in enumerate(letters)
               if s.kind == Kind.SUBSPACE and _absorbed_at(letters, i, absorbing, classical, cyclic=True)]
        if not hit:
            break
        i = hit[0]
        letters = reduce_word(letters[i + 1:] + letters[:i], classical, absorbing)
    if letters is None:
        return TraceWord(ZERO)
    blocks = _cyclic_blocks(letters, classical)
    if blocks is None:
        return TraceWord(ZERO)
    if not blocks:
        return TraceWord(ONE)
    k = len(blocks)
    forward = min(tuple(s for blk in blocks[i:] + blocks[:i] for s in blk) for i in range(k))
    rev = blocks[::-1]
    backward = min(tuple(s for blk in rev[i:] + rev[:i] for s in blk) for i in range(k))
    rep = min(forward, backward)
    return TraceWord(Monomial(rep), conjugated=rep != forward, real=forward == backward)


def trace_class(u: Monomial, v: Monomial, classical: bool = False, absorbing=()) -> TraceWord:
    """Class of the moment-matrix entry ``Tr(u v^dagger)``."""
    return trace_word(u.letters + tuple(reversed(v.letters)), classical, absorbing)


def evaluate(word: Iterable[OperatorSymbol], operators: dict, dim: int) -> np.ndarray:
    """Multiply out ``word`` with concrete matrices ``operators[symbol]``."""
    out = np.eye(dim, dtype=complex)
    for sym in word:
        if sym.kind != Kind.IDENTITY:
            out = out @ operators[sym]
    return out
