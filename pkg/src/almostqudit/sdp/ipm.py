"""Primal-dual interior-point solver for block SDPs in LMI form.

After equality elimination the problem handled here is::

    (D)  maximize  b @ z   s.t.  Z_k = C_k - sum_j z_j A_jk  >= 0,   s = h - G z >= 0
    (P)  minimize  <C, X> + h @ x   s.t.  A(X) + G^T x = b,  X >= 0, x >= 0

(D) is the moment problem; the value of (P) certifies an upper bound.
Search directions are HKM with a Mehrotra predictor-corrector step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .problem import SdpProblem, SdpSolution, eliminate_equalities

log = logging.getLogger(__name__)


@dataclass
class IpmSettings:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 120
    step_fraction: float = 0.98
    schur_chunk: int = 64
    verbose: bool = False


class _Block:
    """One PSD block with its coefficient operator ``A_j`` stored column-wise."""

    def __init__(self, sdp_block, num_vars):
        n = self.n = sdp_block.size
        self.C = sdp_block.constant_matrix()
        K = -sdp_block.coefficient_csr(num_vars)  # A_j = -F_j
        self.K = K.tocsr()
        self.Kc = K.tocsc()
        self.KT = self.Kc.T.tocsr()
        self.used = np.flatnonzero(np.diff(self.Kc.indptr))
        self.nnz = self.Kc.nnz
        # (var, row) x col layout of every A_j, for the dense-product Schur route
        coo = self.Kc.tocoo()
        r, c = np.divmod(coo.row, n)
        local = np.full(num_vars, -1)
        local[self.used] = np.arange(len(self.used))
        self.stack = sp.csr_matrix((coo.data, (local[coo.col] * n + r, c)), shape=(len(self.used) * n, n))
        m_b = len(self.used)
        self.dense_route = m_b * m_b * n * n < max(1, n * n * self.nnz)

    def op(self, z):
        return (self.K @ z).reshape(self.n, self.n)

    def adj(self, X):
        return self.KT @ X.ravel()

    def schur(self, X, Zinv, M, chunk):
        n = self.n
        if self.dense_route:
            m_b = len(self.used)
            AX = (self.stack @ X).reshape(m_b, n * n)              # rows: vec(A_i X)
            AZ = (self.stack @ Zinv).reshape(m_b, n, n)            # A_j Zinv
            ZA = AZ.transpose(0, 2, 1).reshape(m_b, n * n)         # vec(Zinv A_j)
            M[np.ix_(self.used, self.used)] += AX @ ZA.T
            return
        Kc = self.Kc
        cols = self.used
        for start in range(0, len(cols), chunk):
            sel = cols[start:start + chunk]
            G = np.empty((n * n, len(sel)))
            for k, j in enumerate(sel):
                lo, hi = Kc.indptr[j], Kc.indptr[j + 1]
                r, c = np.divmod(Kc.indices[lo:hi], n)
                G[:, k] = ((X[:, r] * Kc.data[lo:hi]) @ Zinv[c, :]).ravel()
            M[:, sel] += self.KT @ G


def _max_step(X, dX):
    try:
        L = la.cholesky(X, lower=True)
    except la.LinAlgError:
        return 0.0
    W = la.solve_triangular(L, dX, lower=True)
    W = la.solve_triangular(L, W.T, lower=True)
    lam = la.eigvalsh((W + W.T) / 2, subset_by_index=[0, 0])[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    return np.inf if not neg.any() else float(np.min(-x[neg] / dx[neg]))


def _chol_solve_factory(M, refine=2):
    """Solver for the Schur system with Jacobi scaling and iterative refinement."""
    M = (M + M.T) / 2
    diag = np.abs(np.diag(M))
    dscale = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    Ms = M * dscale[:, None] * dscale[None, :]
    reg = 0.0
    base = None
    for _ in range(12):
        try:
            cf = la.cho_factor(Ms + reg * np.eye(len(Ms)), lower=True, check_finite=False)
            base = lambda r: la.cho_solve(cf, r, check_finite=False)
            break
        except la.LinAlgError:
            reg = 1e-14 if reg == 0.0 else reg * 100
    if base is None:
        lu = la.lu_factor(Ms + 1e-8 * np.eye(len(Ms)))
        base = lambda r: la.lu_solve(lu, r)

    def solve(rhs):
        rs = rhs * dscale
        u = base(rs)
        for _ in range(refine):
            u = u + base(rs - Ms @ u)
        return u * dscale
    return solve


def solve_ipm(problem: SdpProblem, settings: IpmSettings | None = None) -> SdpSolution:
    settings = settings or IpmSettings()
    reduced, reduction = eliminate_equalities(problem)
    m = reduced.num_vars
    b = reduced.objective.copy()

    blocks = [_Block(blk, m) for blk in reduced.blocks]
    G = -reduced.rows.tocsr()          # s = h - G z  with  rows @ z >= bounds
    h = -reduced.bounds.astype(float)
    n_lp = len(h)

    used = np.zeros(m, dtype=bool)
    for blk in blocks:
        used[blk.used] = True
    if n_lp:
        used[np.unique(G.indices)] = True
    if np.any(b[~used] != 0):
        return SdpSolution("unbounded", np.inf, np.inf, solver="native",
                           message="objective involves an unconstrained variable")
    active = np.flatnonzero(used)

    dims = [blk.n for blk in blocks]
    n_tot = sum(dims) + n_lp
    if n_tot == 0:
        z = np.zeros(m)
        return SdpSolution("optimal", reduced.offset, reduced.offset, reduction.lift(z), solver="native")

    # initial point
    normA = np.zeros(m)
    for blk in blocks:
        normA += np.asarray(blk.Kc.multiply(blk.Kc).sum(axis=0)).ravel()
    if n_lp:
        normA += np.asarray(G.multiply(G).sum(axis=0)).ravel()
    normA = np.sqrt(normA)
    ratio = np.max((1 + np.abs(b[active])) / (1 + normA[active]), initial=1.0)
    X, Z = [], []
    for blk in blocks:
        n = blk.n
        xi = max(10.0, np.sqrt(n), n * ratio)
        eta = max(10.0, np.sqrt(n), normA.max(initial=0.0), np.linalg.norm(blk.C))
        X.append(xi * np.eye(n))
        Z.append(eta * np.eye(n))
    x_lp = np.full(n_lp, max(10.0, np.sqrt(max(n_lp, 1)) * ratio))
    s_lp = np.full(n_lp, max(10.0, normA.max(initial=0.0), np.linalg.norm(h)))
    z = np.zeros(m)

    normb = 1 + np.linalg.norm(b)
    normC = 1 + np.sqrt(sum(np.linalg.norm(blk.C) ** 2 for blk in blocks) + h @ h)
    status = "failed"
    history = []
    best = None
    it = 0
    pobj = dobj = np.nan
    pinf = dinf = np.inf
    for it in range(settings.max_iter + 1):
        AX = np.zeros(m)
        for blk, Xb in zip(blocks, X):
            AX += blk.adj(Xb)
        if n_lp:
            AX += G.T @ x_lp
        rp = b - AX
        Rd = [blk.C - Zb - blk.op(z) for blk, Zb in zip(blocks, Z)]
        rd_lp = h - s_lp - G @ z if n_lp else np.zeros(0)
        pobj = sum(np.vdot(blk.C, Xb) for blk, Xb in zip(blocks, X)) + h @ x_lp
        dobj = b @ z
        mu = (sum(np.vdot(Xb, Zb) for Xb, Zb in zip(X, Z)) + x_lp @ s_lp) / n_tot
        pinf = np.linalg.norm(rp) / normb
        dinf = np.sqrt(sum(np.linalg.norm(R) ** 2 for R in Rd) + rd_lp @ rd_lp) / normC
        relgap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
        if settings.verbose:
            log.info("it %3d pobj %.10e dobj %.10e gap %.2e pinf %.2e dinf %.2e mu %.2e",
                     it, pobj, dobj, relgap, pinf, dinf, mu)
        history.append((relgap, pinf, dinf))
        merit = max(relgap, pinf, dinf)
        if best is None or merit < best[0]:
            best = (merit, it, z.copy(), pobj, dobj, pinf, dinf, relgap)
        elif merit > 100 * best[0] and best[0] < 1e-3:
            break  # numerical breakdown: fall back to the best iterate
        if relgap < settings.gap_tol and pinf < settings.feas_tol and dinf < settings.feas_tol:
            status = "optimal"
            break
        # Farkas-type rays
        nearly_solved = best[0] < 1e-4
        if not nearly_solved and pobj < 0 and np.linalg.norm(AX) < 1e-8 * -pobj and -pobj > 1e6:
            status = "infeasible"
            break
        ray = np.sqrt(sum(np.linalg.norm(Zb + blk.op(z)) ** 2 for blk, Zb in zip(blocks, Z)))
        if not nearly_solved and dobj > 1e6 and ray < 1e-8 * dobj:
            status = "unbounded"
            break
        if it == settings.max_iter:
            break

        Zinv = []
        for Zb in Z:
            try:
                Zi = la.cho_solve(la.cho_factor(Zb, lower=True), np.eye(len(Zb)))
            except la.LinAlgError:
                Zi = np.linalg.pinv(Zb)
            Zinv.append((Zi + Zi.T) / 2)
        M = np.zeros((m, m))
        for blk, Xb, Zi in zip(blocks, X, Zinv):
            blk.schur(Xb, Zi, M, settings.schur_chunk)
        if n_lp:
            M += (G.T @ sp.diags(x_lp / s_lp) @ G).toarray()
        M = M[np.ix_(active, active)]
        solve = _chol_solve_factory(M)

        def direction(sigma, corr_X, corr_x):
            T = [sigma * mu * Zi - Xb - cX for Zi, Xb, cX in zip(Zinv, X, corr_X)]
            t_lp = sigma * mu / s_lp - x_lp - corr_x if n_lp else np.zeros(0)
            rhs = rp.copy()
            for blk, Tb, Xb, Rb, Zi in zip(blocks, T, X, Rd, Zinv):
                rhs -= blk.adj(Tb - Xb @ Rb @ Zi)
            if n_lp:
                rhs -= G.T @ (t_lp - x_lp * rd_lp / s_lp)
            dz = np.zeros(m)
            dz[active] = solve(rhs[active])
            dZ = [Rb - blk.op(dz) for blk, Rb in zip(blocks, Rd)]
            dX = []
            for Tb, Xb, dZb, Zi in zip(T, X, dZ, Zinv):
                D = Tb - Xb @ dZb @ Zi
                dX.append((D + D.T) / 2)
            ds = rd_lp - G @ dz if n_lp else np.zeros(0)
            dx = t_lp - x_lp * ds / s_lp if n_lp else np.zeros(0)
            return dz, dX, dZ, dx, ds

        def steps(dX, dZ, dx, ds):
            ap = min([_max_step(Xb, d) for Xb, d in zip(X, dX)] + [_max_step_lp(x_lp, dx)])
            ad = min([_max_step(Zb, d) for Zb, d in zip(Z, dZ)] + [_max_step_lp(s_lp, ds)])
            return ap, ad

        zeros = [np.zeros_like(Xb) for Xb in X]
        dz, dX, dZ, dx, ds = direction(0.0, zeros, np.zeros(n_lp))
        ap, ad = steps(dX, dZ, dx, ds)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (sum(np.vdot(Xb + ap * d1, Zb + ad * d2) for Xb, Zb, d1, d2 in zip(X, Z, dX, dZ))
                  + (x_lp + ap * dx) @ (s_lp + ad * ds)) / n_tot
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0
        corr_X = [d1 @ d2 @ Zi for d1, d2, Zi in zip(dX, dZ, Zinv)]
        corr_x = dx * ds / s_lp if n_lp else np.zeros(0)
        dz, dX, dZ, dx, ds = direction(sigma, corr_X, corr_x)
        ap, ad = steps(dX, dZ, dx, ds)
        tau = settings.step_fraction
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)
        X = [Xb + ap * d for Xb, d in zip(X, dX)]
        Z = [Zb + ad * d for Zb, d in zip(Z, dZ)]
        x_lp = x_lp + ap * dx
        s_lp = s_lp + ad * ds
        z = z + ad * dz
        if settings.verbose:
            log.info("    steps %.3e %.3e sigma %.2e", ap, ad, sigma)
        if max(ap, ad) < 1e-10:
            break

    if status not in ("optimal", "infeasible", "unbounded"):
        _, _, z, pobj, dobj, pinf, dinf, relgap = best
        if relgap < 1e-5 and pinf < 1e-5 and dinf < 1e-6:
            status = "inaccurate"
    y = reduction.lift(z)
    off = reduced.offset
    return SdpSolution(status, float(dobj + off), float(pobj + off), y, it, float(dinf), float(pinf),
                       float(abs(pobj - dobj)), "native")
