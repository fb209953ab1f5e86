"""Sparse block SDP container shared by all solver backends.

Convention (maximisation, linear-matrix-inequality form)::

    maximize    objective @ y + offset
    subject to  F0_k + sum_i y_i F_ik  >= 0   (PSD) for every block k
                rows @ y  (>= | ==)  bounds

Block coefficients are stored as upper-triangular COO triplets; each
off-diagonal entry stands for the symmetric pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..errors import DomainError

RELATIONS = (">=", "==")


@dataclass
class SdpBlock:
    size: int
    var: np.ndarray
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray
    const_row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    const_col: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    const_val: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.var = np.asarray(self.var, dtype=np.int64)
        self.row = np.asarray(self.row, dtype=np.int64)
        self.col = np.asarray(self.col, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=float)
        self.const_row = np.asarray(self.const_row, dtype=np.int64)
        self.const_col = np.asarray(self.const_col, dtype=np.int64)
        self.const_val = np.asarray(self.const_val, dtype=float)
        # canonical orientation and ordering: upper triangle, sorted by (var, row, col)
        r, c = np.minimum(self.row, self.col), np.maximum(self.row, self.col)
        order = np.lexsort((c, r, self.var))
        self.var, self.row, self.col, self.val = self.var[order], r[order], c[order], self.val[order]
        r, c = np.minimum(self.const_row, self.const_col), np.maximum(self.const_row, self.const_col)
        order = np.lexsort((c, r))
        self.const_row, self.const_col, self.const_val = r[order], c[order], self.const_val[order]

    def constant_matrix(self) -> np.ndarray:
        return _symmetric_dense(self.size, self.const_row, self.const_col, self.const_val)

    def matrix(self, y) -> np.ndarray:
        """Dense value of the block at variable vector ``y``."""
        y = np.asarray(y, dtype=float)
        out = _symmetric_dense(self.size, self.row, self.col, self.val * y[self.var])
        return out + self.constant_matrix()

    def coefficient_csr(self, num_vars: int) -> sp.csr_matrix:
        """Map ``y -> vec(sum_i y_i F_i)`` (row-major, both triangles)."""
        n = self.size
        off = self.row != self.col
        rows = np.concatenate([self.row * n + self.col, (self.col * n + self.row)[off]])
        cols = np.concatenate([self.var, self.var[off]])
        vals = np.concatenate([self.val, self.val[off]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n * n, num_vars))


def _symmetric_dense(n, row, col, val):
    out = np.zeros((n, n))
    np.add.at(out, (row, col), val)
    off = row != col
    np.add.at(out, (col[off], row[off]), val[off])
    return out


@dataclass
class SdpProblem:
    num_vars: int
    objective: np.ndarray
    blocks: list
    offset: float = 0.0
    rows: sp.csr_matrix | None = None
    relations: list = field(default_factory=list)
    bounds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    var_names: list | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.rows is None:
            self.rows = sp.csr_matrix((0, self.num_vars))
        self.rows = sp.csr_matrix(self.rows)
        self.bounds = np.asarray(self.bounds, dtype=float)
        self.relations = list(self.relations)

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]

    def validate(self) -> None:
        m = self.num_vars
        if self.objective.shape != (m,):
            raise DomainError("objective length does not match num_vars")
        if self.rows.shape[1] != m or len(self.relations) != self.num_rows or len(self.bounds) != self.num_rows:
            raise DomainError("linear rows are inconsistent")
        if any(r not in RELATIONS for r in self.relations):
            raise DomainError(f"relations must be one of {RELATIONS}")
        used = np.zeros(m, dtype=bool)
        for blk in self.blocks:
            if blk.size < 1:
                raise DomainError("block sizes must be positive")
            for idx in (blk.row, blk.col, blk.const_row, blk.const_col):
                if idx.size and (idx.min() < 0 or idx.max() >= blk.size):
                    raise DomainError("block entry outside the block")
            if blk.var.size and (blk.var.min() < 0 or blk.var.max() >= m):
                raise DomainError("block references an unknown variable")
            used[blk.var] = True
        used[np.unique(self.rows.indices)] = True
        if not used.all():
            raise DomainError(f"variables never constrained: {np.flatnonzero(~used)[:10].tolist()}")

    def value(self, y) -> float:
        return float(self.objective @ y + self.offset)

    def residuals(self, y) -> dict:
        """Constraint violations at ``y`` (all zero when feasible)."""
        y = np.asarray(y, dtype=float)
        psd = [max(0.0, -np.linalg.eigvalsh(b.matrix(y))[0]) for b in self.blocks]
        lhs = self.rows @ y
        viol = np.where(np.array(self.relations) == "==", np.abs(lhs - self.bounds),
                        np.maximum(0.0, self.bounds - lhs)) if self.num_rows else np.zeros(0)
        return {"psd": max(psd, default=0.0), "linear": float(viol.max(initial=0.0))}

    def scaled(self, factor: float) -> "SdpProblem":
        """Same feasible set, objective multiplied by ``factor``."""
        return SdpProblem(self.num_vars, self.objective * factor, self.blocks, self.offset * factor,
                          self.rows, self.relations, self.bounds, self.var_names)


@dataclass
class Reduction:
    """Affine parametrisation ``y = base + basis @ z`` of the equality rows."""

    base: np.ndarray
    basis: sp.csr_matrix

    def lift(self, z) -> np.ndarray:
        return self.base + self.basis @ z


def eliminate_equalities(problem: SdpProblem, tol: float = 1e-11):
    """Remove ``==`` rows by substitution.

    Returns ``(reduced_problem, reduction)``; the reduced problem only has
    ``>=`` rows.  Raises ``DomainError`` if the equalities are inconsistent.
    """
    m = problem.num_vars
    eq = np.array([r == "==" for r in problem.relations], dtype=bool)
    if not eq.any():
        return problem, Reduction(np.zeros(m), sp.identity(m, format="csr"))
    E = problem.rows[np.flatnonzero(eq)]
    f = problem.bounds[eq]

    # substitute singleton rows first; they are the bulk and need no fill-in
    base = np.zeros(m)
    fixed = np.zeros(m, dtype=bool)
    coupled = []
    Ec = E.tocsr()
    for k in range(Ec.shape[0]):
        cols = Ec.indices[Ec.indptr[k]:Ec.indptr[k + 1]]
        vals = Ec.data[Ec.indptr[k]:Ec.indptr[k + 1]]
        keep = np.abs(vals) > 0
        cols, vals = cols[keep], vals[keep]
        if len(cols) == 1:
            value = f[k] / vals[0]
            if fixed[cols[0]] and abs(base[cols[0]] - value) > 1e-9 * (1 + abs(value)):
                raise DomainError("inconsistent equality constraints")
            fixed[cols[0]] = True
            base[cols[0]] = value
        else:
            coupled.append(k)

    free = np.flatnonzero(~fixed)
    if coupled:
        Ecp = Ec[coupled]
        rhs = f[coupled] - Ecp @ base
        dense = Ecp[:, free].toarray()
        # drop the columns no coupled row touches before the pivoted QR
        touched = np.flatnonzero(np.abs(dense).sum(axis=0) > 0)
        D = dense[:, touched]
        Q, R, piv = scipy.linalg.qr(D, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int((diag > tol * max(1.0, diag.max(initial=0.0))).sum())
        piv_cols = touched[piv[:rank]]
        other_cols = touched[piv[rank:]]
        R11 = R[:rank, :rank]
        R12 = R[:rank, rank:]
        qtb = Q.T @ rhs
        if rank < len(qtb) and np.abs(qtb[rank:]).max(initial=0.0) > 1e-8 * (1 + np.abs(rhs).max()):
            raise DomainError("inconsistent equality constraints")
        sol0 = scipy.linalg.solve_triangular(R11, qtb[:rank])
        coef = scipy.linalg.solve_triangular(R11, R12) if R12.size else np.zeros((rank, 0))
        coef[np.abs(coef) < 1e-14] = 0.0
        pivots = free[piv_cols]
        base[pivots] = sol0
        dependent = np.zeros(m, dtype=bool)
        dependent[pivots] = True
        independent = np.flatnonzero(~fixed & ~dependent)
        pos = {v: i for i, v in enumerate(independent)}
        rows_, cols_, vals_ = [], [], []
        for v in independent:
            rows_.append(v), cols_.append(pos[v]), vals_.append(1.0)
        other_vars = free[other_cols]
        for i, p in enumerate(pivots):
            nz = np.flatnonzero(coef[i])
            for j in nz:
                rows_.append(p), cols_.append(pos[other_vars[j]]), vals_.append(-coef[i, j])
        basis = sp.csr_matrix((vals_, (rows_, cols_)), shape=(m, len(independent)))
    else:
        independent = free
        basis = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(m, len(free)))

    reduction = Reduction(base, basis)
    return substitute(problem, reduction, keep_rows=~eq), reduction


def substitute(problem: SdpProblem, reduction: Reduction, keep_rows=None) -> SdpProblem:
    """Rewrite ``problem`` in the reduced variables of ``reduction``."""
    base, basis = reduction.base, reduction.basis.tocsr()
    k = basis.shape[1]
    blocks = []
    for blk in problem.blocks:
        # constant part picks up the fixed contributions
        crow = np.concatenate([blk.const_row, blk.row])
        ccol = np.concatenate([blk.const_col, blk.col])
        cval = np.concatenate([blk.const_val, blk.val * base[blk.var]])
        crow, ccol, cval = _merge_triplets(crow, ccol, cval)
        # coefficient part: F'_j = sum_i basis[i, j] F_i
        counts = np.diff(basis.indptr)[blk.var]
        rep = np.repeat(np.arange(len(blk.var)), counts)
        starts = basis.indptr[blk.var]
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        idx = np.repeat(starts, counts) + offs
        nvar = basis.indices[idx]
        nval = blk.val[rep] * basis.data[idx]
        v, r, c, x = _merge_quads(nvar, blk.row[rep], blk.col[rep], nval)
        blocks.append(SdpBlock(blk.size, v, r, c, x, crow, ccol, cval))
    if keep_rows is None:
        keep_rows = np.ones(problem.num_rows, dtype=bool)
    rows = problem.rows[np.flatnonzero(keep_rows)]
    bounds = problem.bounds[keep_rows] - rows @ base
    relations = [r for r, keep in zip(problem.relations, keep_rows) if keep]
    new_rows = (rows @ basis).tocsr()
    new_rows.eliminate_zeros()
    return SdpProblem(k, basis.T @ problem.objective, blocks, problem.offset + problem.objective @ base,
                      new_rows, relations, bounds)


def _merge_triplets(r, c, v):
    if len(r) == 0:
        return r, c, v
    key = np.stack([r, c])
    uniq, inv = np.unique(key, axis=1, return_inverse=True)
    out = np.zeros(uniq.shape[1])
    np.add.at(out, inv.ravel(), v)
    keep = out != 0
    return uniq[0][keep], uniq[1][keep], out[keep]


def _merge_quads(var, r, c, v):
    if len(var) == 0:
        return var, r, c, v
    key = np.stack([var, np.minimum(r, c), np.maximum(r, c)])
    uniq, inv = np.unique(key, axis=1, return_inverse=True)
    out = np.zeros(uniq.shape[1])
    np.add.at(out, inv.ravel(), v)
    keep = np.abs(out) > 1e-15
    return uniq[0][keep], uniq[1][keep], uniq[2][keep], out[keep]


@dataclass
class SdpSolution:
    """Outcome of a solve.

    ``primal_value`` is the objective at the returned ``y``; ``dual_value``
    is the value certified by the dual certificate, i.e. the upper bound for
    a maximisation.
    """

    status: str
    primal_value: float = float("nan")
    dual_value: float = float("nan")
    y: np.ndarray | None = None
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")
    solver: str = ""
    message: str = ""

    STATUSES = ("optimal", "infeasible", "unbounded", "inaccurate", "failed")

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")

    @property
    def bound(self) -> float:
        """Reported upper bound for a maximisation."""
        return max(self.dual_value, self.primal_value)

    @property
    def slack(self) -> float:
        """Duality gap plus residual infeasibility; add to ``bound`` for a safe margin."""
        gap = abs(self.dual_value - self.primal_value)
        res = 0.0 if np.isnan(self.primal_residual) else self.primal_residual
        return gap + res
