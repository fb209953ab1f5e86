import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from almostqudit.errors import DomainError
from almostqudit.opalg import (IDENTITY, ONE, SUBSPACE, Kind, Monomial, canonicalize, check_symbol, evaluate,
                               measurement, parse_symbol, state, trace_class, trace_word)

r0, r1, r2 = state(0), state(1), state(2)
M00, M10, M01 = measurement(0, 0), measurement(0, 1), measurement(1, 0)


def test_parse_symbols():
    assert parse_symbol("1") == IDENTITY
    assert parse_symbol("V") == SUBSPACE
    assert parse_symbol("r3") == state(3)
    assert parse_symbol("M1|2") == measurement(2, 1)
    with pytest.raises(DomainError):
        parse_symbol("Q7")


def test_check_symbol_range():
    check_symbol(state(1), 2, (2, 2))
    with pytest.raises(DomainError):
        check_symbol(state(2), 2, (2, 2))
    with pytest.raises(DomainError):
        check_symbol(measurement(0, 2), 2, (2, 2))


def test_idempotence_and_orthogonality():
    assert canonicalize((r0, r0)) == Monomial((r0,))
    assert canonicalize((M00, M10)).zero
    assert canonicalize((r0, IDENTITY, M00, M00, r0, r0)) == Monomial((r0, M00, r0))
    assert canonicalize((IDENTITY, IDENTITY)) == ONE


def test_canonicalize_is_idempotent():
    w = canonicalize((r1, r1, M01, SUBSPACE, SUBSPACE, r0))
    assert canonicalize(w.letters) == w


def test_classical_mode_commutes_runs():
    a = canonicalize((r1, r0, M01, M00), classical=True)
    b = canonicalize((r0, r1, M00, M01), classical=True)
    assert a == b
    assert canonicalize((r1, r0), classical=False) != canonicalize((r0, r1), classical=False)


def test_absorption_for_exact_qudits():
    assert canonicalize((SUBSPACE, r0, M00), absorbing=(0,)) == Monomial((r0, M00))
    assert canonicalize((SUBSPACE, r1, M00), absorbing=(0,)) == Monomial((SUBSPACE, r1, M00))


def test_trace_class_examples():
    assert trace_class(Monomial((r0,)), Monomial((M00,))) == trace_word((r0, M00))
    assert trace_class(Monomial((r0, M00)), Monomial((r1,))) == trace_word((M00, r1, r0))
    assert trace_class(ONE, ONE).representative == ONE
    assert trace_class(Monomial((M00,)), Monomial((M10,))).zero


def test_trace_class_symmetric():
    u, v = Monomial((r0, M01)), Monomial((r1, M00, r2))
    assert trace_class(u, v) == trace_class(v, u)


def _random_projector(dim, rank, rng):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q[:, :rank] @ q[:, :rank].conj().T


def test_derived_example_numerically():
    rng = np.random.default_rng(1)
    ops = {r0: _random_projector(4, 1, rng), M00: _random_projector(4, 2, rng)}
    lhs = evaluate((r0, IDENTITY, M00, M00, r0, r0), ops, 4)
    rhs = evaluate((r0, M00, r0), ops, 4)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_kinds():
    assert parse_symbol("r0").kind == Kind.STATE


letters = st.sampled_from([IDENTITY, SUBSPACE, r0, r1, r2, M00, M10, M01])
words = st.lists(letters, max_size=7)


@settings(max_examples=300, deadline=None)
@given(words, st.booleans())
def test_canonical_form_is_a_fixed_point(word, classical):
    once = canonicalize(word, classical=classical, absorbing=(0,))
    if not once.zero:
        assert canonicalize(once.letters, classical=classical, absorbing=(0,)) == once


@settings(max_examples=300, deadline=None)
@given(words, st.integers(0, 6), st.booleans())
def test_trace_class_ignores_rotation_and_reversal(word, shift, reverse):
    k = shift % len(word) if word else 0
    moved = word[k:] + word[:k]
    if reverse:
        moved = moved[::-1]
    assert trace_word(moved) == trace_word(word)
