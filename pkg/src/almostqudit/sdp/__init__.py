"""Block SDP representation, solvers and sparse interchange files.

``solve`` dispatches to the built-in interior-point method (default) or to
cvxpy.  The environment variable ``ALMOSTQUDIT_SOLVER`` (``native`` or
``cvxpy`` / ``cvxpy:SCS`` ...) overrides the default backend.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

from .ipm import IpmSettings, solve_ipm
from .problem import Reduction, SdpBlock, SdpProblem, SdpSolution, eliminate_equalities
from .sdpa import export_sdpa, import_sdpa, read_sdpa, write_sdpa

SOLVER_ENV = "ALMOSTQUDIT_SOLVER"

log = logging.getLogger(__name__)


@dataclass
class SolverSettings:
    """Backend choice and tolerances shared by every solve.

    ``backend`` is ``"native"`` or ``"cvxpy"``; ``cvx_solver`` names the
    cvxpy solver (``None`` lets the backend pick).  With ``fallback`` a
    failed native solve is retried through cvxpy.
    """

    backend: str | None = None
    gap_tol: float = 1e-7
    feas_tol: float = 1e-8
    max_iter: int = 150
    cvx_solver: str | None = None
    verbose: bool = False
    fallback: bool = True

    def resolved_backend(self) -> tuple[str, str | None]:
        if self.backend is not None:
            return self.backend, self.cvx_solver
        env = os.environ.get(SOLVER_ENV, "native").strip()
        name, _, sub = env.partition(":")
        return name.lower(), (sub or self.cvx_solver)


def solve(problem: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve ``problem`` (a maximisation) and report the certified bound.

    The returned ``dual_value`` bounds the optimum from above; statuses other
    than ``optimal``/``inaccurate`` carry no usable value.
    """
    settings = settings or SolverSettings()
    backend, sub = settings.resolved_backend()
    if backend == "native":
        ipm = IpmSettings(gap_tol=settings.gap_tol, feas_tol=settings.feas_tol,
                          max_iter=settings.max_iter, verbose=settings.verbose)
        sol = solve_ipm(problem, ipm)
        if sol.status != "failed" or not settings.fallback:
            return sol
        # problems without a strictly feasible point can stall the path-following
        # method; a homogeneous-embedding solver usually still gets through
        from .cvx import solve_cvxpy

        log.info("native solver failed (%s); retrying with cvxpy", sol.message)
        retry = solve_cvxpy(problem, sub, verbose=settings.verbose)
        return retry if retry.ok else sol
    if backend == "cvxpy":
        from .cvx import solve_cvxpy

        return solve_cvxpy(problem, sub, verbose=settings.verbose)
    raise ValueError(f"unknown solver backend {backend!r}")


__all__ = [
    "Reduction", "SdpBlock", "SdpProblem", "SdpSolution", "SolverSettings", "eliminate_equalities",
    "export_sdpa", "import_sdpa", "read_sdpa", "write_sdpa", "solve",
]
