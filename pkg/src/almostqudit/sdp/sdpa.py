"""Reading and writing the sparse SDPA interchange format.

The file describes ``minimize c @ x  s.t.  sum_i x_i F_i - F_0 >= 0``.  Our
maximisation maps onto it with ``c = -objective`` and ``F_0 = -constant``;
linear rows become a diagonal (negative-size) block, an equality row being
written as a pair of opposite inequalities so that plain SDPA consumers see
the right problem.  Information that SDPA cannot carry (relations, the
objective offset) is stored in ``*`` comment lines at the top of the file and
restored on import.
"""
from __future__ import annotations

import re

import numpy as np
import scipy.sparse as sp

from ..errors import ParseError
from .problem import SdpBlock, SdpProblem

_FMT = "%.17g"
_SEPARATORS = re.compile(r"[,{}()]")


def export_sdpa(problem: SdpProblem) -> str:
    m = problem.num_vars
    lines = [f'"almostqudit SDP: maximize objective @ y + offset, {m} variables',
             f"* offset {_FMT % problem.offset}"]
    if problem.num_rows:
        lines.append("* relations " + " ".join("eq" if r == "==" else "ge" for r in problem.relations))

    # linear rows, expanded into the diagonal block
    rows = problem.rows.tocsr()
    diag_rows, diag_bounds = [], []
    for k in range(problem.num_rows):
        row = rows.getrow(k)
        diag_rows.append(row)
        diag_bounds.append(problem.bounds[k])
        if problem.relations[k] == "==":
            diag_rows.append(-row)
            diag_bounds.append(-problem.bounds[k])

    sizes = [blk.size for blk in problem.blocks]
    if diag_rows:
        sizes.append(-len(diag_rows))
    lines.append(str(m))
    lines.append(str(len(sizes)))
    lines.append(" ".join(str(s) for s in sizes))
    lines.append(" ".join(_FMT % (-c + 0.0) for c in problem.objective))

    for k, blk in enumerate(problem.blocks, start=1):
        for r, c, v in zip(blk.const_row, blk.const_col, blk.const_val):
            lines.append(f"0 {k} {r + 1} {c + 1} {_FMT % (-v + 0.0)}")
        for i, r, c, v in zip(blk.var, blk.row, blk.col, blk.val):
            lines.append(f"{i + 1} {k} {r + 1} {c + 1} {_FMT % v}")
    if diag_rows:
        k = len(problem.blocks) + 1
        for j, b in enumerate(diag_bounds):
            if b != 0:
                lines.append(f"0 {k} {j + 1} {j + 1} {_FMT % b}")
        entries = []
        for j, row in enumerate(diag_rows):
            for i, v in zip(row.indices, row.data):
                if v != 0:
                    entries.append((i, j, v))
        for i, j, v in sorted(entries):
            lines.append(f"{i + 1} {k} {j + 1} {j + 1} {_FMT % v}")
    return "\n".join(lines) + "\n"


def _numbers(text, lineno, kind=float):
    try:
        return [kind(tok) for tok in _SEPARATORS.sub(" ", text).split()]
    except ValueError as exc:
        raise ParseError(f"expected numbers, got {text.strip()!r}", lineno) from exc


def import_sdpa(text: str) -> SdpProblem:
    offset = 0.0
    relations = None
    body = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped[0] in '"*':
            parts = stripped[1:].split()
            if stripped[0] == "*" and parts[:1] == ["offset"] and len(parts) == 2:
                offset = _numbers(parts[1], lineno)[0]
            elif stripped[0] == "*" and parts[:1] == ["relations"]:
                relations = parts[1:]
            continue
        body.append((lineno, stripped))

    pos = 0

    def take(kind, count, what):
        nonlocal pos
        out = []
        first = body[pos][0] if pos < len(body) else None
        while len(out) < count:
            if pos >= len(body):
                raise ParseError(f"unexpected end of file while reading {what}", first)
            lineno, line = body[pos]
            out.extend(_numbers(line, lineno, kind))
            pos += 1
        if len(out) != count:
            raise ParseError(f"{what}: expected {count} values, found {len(out)}", body[pos - 1][0])
        return out

    def take_int(what):
        lineno = body[pos][0] if pos < len(body) else None
        vals = take(float, 1, what)
        if vals[0] != int(vals[0]) or vals[0] < 0:
            raise ParseError(f"{what} must be a nonnegative integer", lineno)
        return int(vals[0])

    m = take_int("number of constraints")
    nblocks = take_int("number of blocks")
    sizes = [int(s) for s in take(float, nblocks, "block structure")] if nblocks else []
    if any(s == 0 for s in sizes):
        raise ParseError("block sizes must be nonzero", body[pos - 1][0])
    c = np.array(take(float, m, "objective vector")) if m else np.zeros(0)

    entries = {k: ([], [], [], []) for k in range(nblocks)}
    for lineno, line in body[pos:]:
        vals = _numbers(line, lineno)
        if len(vals) != 5:
            raise ParseError(f"entry needs 5 fields, found {len(vals)}", lineno)
        i, k, r, col, v = vals
        i, k, r, col = int(i), int(k), int(r), int(col)
        if not 0 <= i <= m:
            raise ParseError(f"matrix index {i} outside 0..{m}", lineno)
        if not 1 <= k <= nblocks:
            raise ParseError(f"block index {k} outside 1..{nblocks}", lineno)
        n = abs(sizes[k - 1])
        if not (1 <= r <= n and 1 <= col <= n):
            raise ParseError(f"entry ({r}, {col}) outside block of size {n}", lineno)
        if sizes[k - 1] < 0 and r != col:
            raise ParseError("off-diagonal entry in a diagonal block", lineno)
        for lst, val in zip(entries[k - 1], (i, r - 1, col - 1, v)):
            lst.append(val)

    blocks = []
    lin_rows, lin_bounds = [], []
    for k, size in enumerate(sizes):
        var, row, col, val = (np.array(a) for a in entries[k])
        var = var.astype(np.int64)
        row = row.astype(np.int64)
        col = col.astype(np.int64)
        const = var == 0
        if size > 0:
            blocks.append(SdpBlock(size, var[~const] - 1, row[~const], col[~const], val[~const],
                                   row[const], col[const], -val[const] + 0.0))
        else:
            n = -size
            A = sp.csr_matrix((val[~const], (row[~const], var[~const] - 1)), shape=(n, m))
            bnd = np.zeros(n)
            np.add.at(bnd, row[const], val[const])
            lin_rows.append(A)
            lin_bounds.append(bnd)

    rows = sp.vstack(lin_rows).tocsr() if lin_rows else sp.csr_matrix((0, m))
    bounds = np.concatenate(lin_bounds) if lin_bounds else np.zeros(0)
    if relations is None:
        rels = [">="] * rows.shape[0]
    else:
        expanded = sum(2 if r == "eq" else 1 for r in relations)
        if expanded != rows.shape[0]:
            raise ParseError("relations comment does not match the diagonal block size")
        keep, rels, j = [], [], 0
        for r in relations:
            keep.append(j)
            rels.append("==" if r == "eq" else ">=")
            j += 2 if r == "eq" else 1
        rows, bounds = rows[keep], bounds[keep]
    return SdpProblem(m, -c + 0.0, blocks, offset, rows, rels, bounds)


def write_sdpa(problem: SdpProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(export_sdpa(problem))


def read_sdpa(path) -> SdpProblem:
    with open(path) as fh:
        return import_sdpa(fh.read())
