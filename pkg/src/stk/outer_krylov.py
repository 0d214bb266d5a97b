"""Outer Krylov solvers.

``gmres`` works on flat vectors (column-major ``vec`` of ``N_h x N_t``
arrays) with right preconditioning; ``flexible=True`` keeps the
preconditioned vectors so the preconditioner may change between steps.
``lr_fgmres`` runs the flexible variant on :class:`LowRank` iterates,
recompressing after every operator application and vector update.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericError
from .la_core import LowRank, lowrank_truncate, numerical_rank
from .rksm import RKSM, SolveReport
from .sylvester import apply_kron, residual_norm_factored, two_term_solve

__all__ = [
    "GmresConfig",
    "gmres",
    "lr_fgmres",
    "rksm_preconditioner",
    "two_term_preconditioner",
    "wave_operator_apply",
]


@dataclass
class GmresConfig:
    tol: float = 1e-8
    maxit: int = 200
    restart: int | None = None
    trunc_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.maxit < 1:
            raise ValueError(f"maxit must be >= 1, got {self.maxit}")


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


class _LeastSquares:
    """Incremental QR of the Hessenberg matrix by Givens rotations."""

    def __init__(self, beta, m):
        self.H = np.zeros((m + 1, m))
        self.R = np.zeros((m + 1, m))
        self.g = np.zeros(m + 1)
        self.g[0] = beta
        self.g0 = beta
        self.cs = np.zeros(m)
        self.sn = np.zeros(m)

    def add_column(self, j, h):
        self.H[: j + 2, j] = h
        col = h.copy()
        for i in range(j):
            c, s = self.cs[i], self.sn[i]
            col[i], col[i + 1] = c * col[i] + s * col[i + 1], -s * col[i] + c * col[i + 1]
        c, s = _givens(col[j], col[j + 1])
        self.cs[j], self.sn[j] = c, s
        col[j] = c * col[j] + s * col[j + 1]
        col[j + 1] = 0.0
        self.R[: j + 2, j] = col
        self.g[j], self.g[j + 1] = c * self.g[j], -s * self.g[j]
        return abs(self.g[j + 1])

    def solve(self, k):
        R = self.R[:k, :k]
        d = np.abs(np.diag(R))
        if d.min() > 1e-14 * d.max():
            return solve_triangular(R, self.g[:k], lower=False)
        # dependent columns (e.g. a preconditioner that repeats itself)
        rhs = np.zeros(k + 1)
        rhs[0] = self.g0
        return np.linalg.lstsq(self.H[: k + 1, :k], rhs, rcond=None)[0]


def gmres(apply, precond, b, cfg=None, flexible=False, x0=None):
    """Right-preconditioned (flexible) GMRES with Givens least squares.

    Orthogonalization is modified Gram-Schmidt with one reorthogonalization.

    Returns ``(x, report)``.  ``report.history`` holds the relative residual
    estimate of every iteration; ``report.true_relres`` is recomputed from
    ``x`` at the end.
    """
    cfg = cfg or GmresConfig()
    precond = precond or (lambda v: v)
    t0 = _time.perf_counter()
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    report = SolveReport()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        report.converged = True
        report.true_relres = 0.0
        return x, report
    m = cfg.restart or cfg.maxit
    total = 0
    while total < cfg.maxit:
        r = b - apply(x) if total or x0 is not None else b.copy()
        beta = np.linalg.norm(r)
        if beta / bnorm <= cfg.tol:
            report.converged = True
            break
        m_cycle = min(m, cfg.maxit - total)
        ls = _LeastSquares(beta, m_cycle)
        V = np.empty((m_cycle + 1, b.size))
        V[0] = r / beta
        Z = []
        k = 0
        for j in range(m_cycle):
            z = precond(V[j])
            w = np.array(apply(z), dtype=float)
            w0 = np.linalg.norm(w)
            if flexible:
                Z.append(z)
            h = np.zeros(j + 2)
            for _ in range(2):
                for i in range(j + 1):
                    hij = V[i] @ w
                    w -= hij * V[i]
                    h[i] += hij
            h[j + 1] = np.linalg.norm(w)
            if not np.all(np.isfinite(h)):
                raise NumericError(f"non-finite value in GMRES at iteration {total + j + 1}", total + j + 1)
            est = ls.add_column(j, h)
            k = j + 1
            report.history.append(est / bnorm)
            mu_now = j + 2 + len(Z)
            report.mu_mem = max(report.mu_mem, mu_now)
            if est / bnorm <= cfg.tol or h[j + 1] <= 1e-14 * w0:
                break
            V[j + 1] = w / h[j + 1]
        y = ls.solve(k)
        if flexible:
            x = x + y @ np.array(Z)
        else:
            x = x + precond(y @ V[:k])
        del V, Z
        total += k
        if report.history[-1] <= cfg.tol:
            report.converged = True
            break
    report.iterations = total
    report.true_relres = float(np.linalg.norm(b - apply(x)) / bnorm)
    report.time_s = _time.perf_counter() - t0
    return x, report


def wave_operator_apply(M_h, A_h, Q_h, Q_t, D_t, M_t, x):
    """``vec(M_h U Q_t^T + A_h U (D_t + D_t^T) + Q_h U M_t)`` for ``x = vec(U)``."""
    n_h, n_t = M_h.shape[0], M_t.shape[0]
    x = np.asarray(x, dtype=float)
    if x.size != n_h * n_t:
        raise ValueError(f"vector length {x.size} does not match {n_h} x {n_t}")
    U = x.reshape((n_h, n_t), order="F")
    Ut = U.T
    out = M_h @ (Q_t @ Ut).T + A_h @ (D_t @ Ut + D_t.T @ Ut).T + Q_h @ (M_t.T @ Ut).T
    return out.ravel(order="F")


def two_term_preconditioner(p, n_h, n_t):
    """Flat-vector wrapper of :func:`two_term_solve`."""

    def apply(v):
        V = v.reshape((n_h, n_t), order="F")
        return two_term_solve(p, V).ravel(order="F")

    return apply


def rksm_preconditioner(M, A, D, C, iters=5, interval=None):
    """A fixed number of RKSM steps as a (nonlinear) low-rank preconditioner."""
    solver = RKSM(M, A, D, C, interval=interval)
    peak = [0]

    def apply(R):
        U, rep = solver.solve(R, fixed_iters=iters)
        peak[0] = max(peak[0], rep.mu_mem)
        return U

    apply.solver = solver
    apply.peak_mu = peak
    return apply


def lr_fgmres(op, precond, F, cfg=None):
    """Flexible GMRES on low-rank iterates for ``op(U) = F``.

    The Krylov vectors and the preconditioned vectors are stored in factored
    form and recompressed at ``cfg.trunc_tol``.  Stops when the residual of
    the assembled iterate, recomputed from its factors, is below ``cfg.tol``.
    """
    cfg = cfg or GmresConfig(maxit=50)
    t0 = _time.perf_counter()
    n_h, n_t = op.shape
    report = SolveReport()
    beta = F.norm()
    if beta == 0.0:
        report.converged = True
        report.true_relres = 0.0
        return LowRank.zeros(n_h, n_t), report
    trunc = cfg.trunc_tol
    V = [lowrank_truncate(F * (1.0 / beta), trunc)]
    Z = []
    ls = _LeastSquares(beta, cfg.maxit)
    U = LowRank.zeros(n_h, n_t)
    true_res = 1.0
    for j in range(cfg.maxit):
        Zj = lowrank_truncate(precond(V[j]), trunc)
        Z.append(Zj)
        W = apply_kron(op, Zj, trunc)
        wnorm = W.norm()
        h = np.zeros(j + 2)
        for _ in range(2):
            coef = np.array([Vi.dot(W) for Vi in V])
            upd = W
            for ci, Vi in zip(coef, V):
                upd = upd - ci * Vi
            W = lowrank_truncate(upd, trunc, atol=trunc * wnorm)
            h[: j + 1] += coef
        h[j + 1] = W.norm()
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite value in LR-FGMRES at iteration {j + 1}", j + 1)
        est = ls.add_column(j, h) / beta
        report.history.append(est)
        report.iterations = j + 1
        stored = sum(v.rank for v in V) + sum(z.rank for z in Z)
        inner = getattr(precond, "peak_mu", [0])[0]
        report.mu_mem = max(report.mu_mem, stored + inner)
        breakdown = h[j + 1] <= 1e-14 * wnorm
        last = j == cfg.maxit - 1
        stagnating = _stagnating(report.history)
        if est <= cfg.tol or breakdown or last or stagnating:
            y = ls.solve(j + 1)
            U = _combine(y, Z, trunc)
            true_res = residual_norm_factored(op, U, F) / beta
            report.history[-1] = true_res
            if true_res <= cfg.tol or breakdown or last:
                break
            if stagnating:
                report.stagnated = True
                break
        V.append(W * (1.0 / h[j + 1]))
    report.true_relres = true_res
    report.converged = true_res <= cfg.tol
    report.rank = numerical_rank(U, 1e-8)
    report.time_s = _time.perf_counter() - t0
    return U, report


def _combine(y, Z, trunc):
    left = np.hstack([yi * z.left for yi, z in zip(y, Z)])
    right = np.hstack([z.right for z in Z])
    return lowrank_truncate(LowRank(left, right), trunc)


def _stagnating(history, window=5, factor=1e-3):
    if len(history) <= window:
        return False
    old, new = history[-window - 1], history[-1]
    return old - new < factor * old
