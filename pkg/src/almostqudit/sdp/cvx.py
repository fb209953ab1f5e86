"""Reference backend: hand the block SDP to cvxpy."""
from __future__ import annotations

import cvxpy as cp
import numpy as np

from .problem import SdpProblem, SdpSolution

_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "inaccurate",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
}


def solve_cvxpy(problem: SdpProblem, solver: str | None = None, verbose: bool = False) -> SdpSolution:
    m = problem.num_vars
    y = cp.Variable(m)
    cons = []
    for blk in problem.blocks:
        n = blk.size
        vec = blk.coefficient_csr(m) @ y + blk.constant_matrix().ravel()
        G = cp.reshape(vec, (n, n), order="C")
        cons.append((G + G.T) / 2 >> 0)
    if problem.num_rows:
        rel = np.array(problem.relations)
        ge, eq = np.flatnonzero(rel == ">="), np.flatnonzero(rel == "==")
        if ge.size:
            cons.append(problem.rows[ge] @ y >= problem.bounds[ge])
        if eq.size:
            cons.append(problem.rows[eq] @ y == problem.bounds[eq])
    prob = cp.Problem(cp.Maximize(problem.objective @ y + problem.offset), cons)
    try:
        prob.solve(solver=solver, verbose=verbose)
    except cp.error.SolverError as exc:
        return SdpSolution("failed", solver=f"cvxpy:{solver}", message=str(exc))
    status = _STATUS.get(prob.status, "failed")
    if status not in ("optimal", "inaccurate"):
        return SdpSolution(status, solver=f"cvxpy:{solver}", message=str(prob.status))
    yv = np.asarray(y.value, dtype=float)
    res = problem.residuals(yv)
    value = float(prob.value)
    return SdpSolution(status, problem.value(yv), value, yv, prob.solver_stats.num_iters or 0,
                       max(res.values()), float("nan"), abs(value - problem.value(yv)),
                       f"cvxpy:{prob.solver_stats.solver_name}")
