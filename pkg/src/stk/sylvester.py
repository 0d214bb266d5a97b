"""Structured matrix equations.

A :class:`KronOp` represents ``X -> sum_p A_p X D_p^T``, which is the
matrix form of ``(sum_p D_p kron A_p) vec(X)`` with column-major ``vec``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SingularityError
from .la_core import EigPair, LowRank, lowrank_truncate, sym_gen_eig

__all__ = [
    "KronOp",
    "TwoTermPrecond",
    "apply_kron",
    "build_two_term_precond",
    "heat_operator",
    "residual_norm_factored",
    "solve_projected_heat",
    "two_term_apply",
    "two_term_solve",
    "wave_operator",
]


@dataclass(frozen=True)
class KronOp:
    """Ordered ``(A_p, D_p)`` pairs acting as ``X -> sum_p A_p X D_p^T``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("KronOp needs at least one term")
        n_h = terms[0][0].shape[0]
        n_t = terms[0][1].shape[0]
        for A, D in terms:
            if A.shape != (n_h, n_h) or D.shape != (n_t, n_t):
                raise ValueError("all spatial and temporal matrices must share their sizes")
        object.__setattr__(self, "terms", terms)

    @property
    def shape(self):
        return (self.terms[0][0].shape[0], self.terms[0][1].shape[0])

    def to_sparse(self):
        """Assemble ``sum_p D_p kron A_p`` (only for oracles and direct solves)."""
        return sum(sp.kron(sp.csr_matrix(D), sp.csr_matrix(A)) for A, D in self.terms).tocsr()

    def matvec(self, x):
        n_h, n_t = self.shape
        X = np.asarray(x).reshape((n_h, n_t), order="F")
        return apply_kron(self, X).ravel(order="F")


def heat_operator(M, A, D, C):
    """Operator of ``M U D + A U C``."""
    return KronOp(((M, D.T.tocsr()), (A, C.T.tocsr())))


def wave_operator(M, A, Q, Qt, Dt, Mt):
    """Operator of ``M U Qt^T + A U (Dt + Dt^T) + Q U Mt``."""
    S = sp.csr_matrix(Dt + Dt.T)
    return KronOp(((M, Qt), (A, S.T.tocsr()), (Q, sp.csr_matrix(Mt.T))))


def apply_kron(op, X, tol=1e-10):
    """Apply ``op`` to a dense array or a :class:`LowRank` (recompressed at ``tol``)."""
    n_h, n_t = op.shape
    if isinstance(X, LowRank):
        if X.shape != (n_h, n_t):
            raise ValueError(f"shape mismatch: operator {op.shape}, argument {X.shape}")
        left = np.hstack([A @ X.left for A, _ in op.terms])
        right = np.hstack([D @ X.right for _, D in op.terms])
        return lowrank_truncate(LowRank(left, right), tol)
    X = np.asarray(X, dtype=float)
    if X.shape != (n_h, n_t):
        raise ValueError(f"shape mismatch: operator {op.shape}, argument {X.shape}")
    out = np.zeros((n_h, n_t))
    for A, D in op.terms:
        out += A @ (D @ X.T).T
    return out


def residual_norm_factored(op, U, F):
    """``||F - op(U)||_F`` from the factors, never forming an ``N_h x N_t`` array."""
    left = [F.left] + [A @ U.left for A, _ in op.terms]
    right = [F.right] + [-(D @ U.right) for _, D in op.terms]
    left = np.hstack(left)
    right = np.hstack(right)
    if left.shape[1] == 0:
        return 0.0
    Rl = np.linalg.qr(left, mode="r")
    Rr = np.linalg.qr(right, mode="r")
    return float(np.linalg.norm(Rl @ Rr.T))


def _bidiag_transpose_solve(d0, d1, g):
    """Solve ``y^T B = g^T`` for upper bidiagonal ``B`` (diagonal d0, superdiagonal d1)."""
    n = d0.size
    y = np.empty(n)
    y[0] = g[0] / d0[0]
    for k in range(1, n):
        y[k] = (g[k] - d1[k - 1] * y[k - 1]) / d0[k]
    return y


def solve_projected_heat(H_M, H_A, D, C, G, eig=None):
    """Solve ``H_M Y D + H_A Y C = G`` for s.p.d. ``H_M``, ``H_A`` and bidiagonal ``D``, ``C``.

    Diagonalizes the pencil ``(H_A, H_M)`` and solves one bidiagonal system
    per eigenvalue.  ``eig`` may supply a precomputed :class:`EigPair`.
    """
    eig = eig or sym_gen_eig(H_A, H_M)
    lam, X = eig.lambdas, eig.X
    Gt = X.T @ G
    dD0, dD1 = _bands(D)
    dC0, dC1 = _bands(C)
    Yt = np.empty_like(Gt)
    for i, li in enumerate(lam):
        d0 = dD0 + li * dC0
        if np.any(d0 == 0) or not np.all(np.isfinite(d0)):
            raise SingularityError(f"row system D + lambda C is singular for lambda = {li!r}")
        Yt[i] = _bidiag_transpose_solve(d0, dD1 + li * dC1, Gt[i])
    return X @ Yt


def _bands(B):
    B = sp.csr_matrix(B)
    n = B.shape[0]
    if (sp.tril(B, -1).nnz or sp.triu(B, 2).nnz) and n > 1:
        raise ValueError("time matrix must be upper bidiagonal")
    return B.diagonal(0).astype(float), B.diagonal(1).astype(float) if n > 1 else np.zeros(0)


@dataclass(frozen=True)
class TwoTermPrecond:
    """Cached diagonalization of ``W -> M_h W Q_t^T + Q_h W M_t``."""

    space: EigPair
    time: EigPair
    denom: np.ndarray

    @property
    def lambdas(self):
        return self.space.lambdas

    @property
    def thetas(self):
        return self.time.lambdas

    def dump_csv(self, path):
        """Write the ``(lambda_i, theta_j)`` grid as ``i,j,lambda,theta,denominator`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "lambda", "theta", "denominator"])
            for i, li in enumerate(self.lambdas):
                for j, tj in enumerate(self.thetas):
                    w.writerow([i, j, repr(float(li)), repr(float(tj)), repr(float(li + tj))])


def build_two_term_precond(M_h, Q_h, M_t, Q_t):
    space = sym_gen_eig(Q_h, M_h)
    time = sym_gen_eig(Q_t, M_t)
    denom = space.lambdas[:, None] + time.lambdas[None, :]
    if np.any(denom <= 0):
        raise SingularityError("two-term equation is not uniquely solvable (lambda_i + theta_j <= 0)")
    return TwoTermPrecond(space, time, denom)


def two_term_solve(p, V):
    """Solve ``M_h W Q_t^T + Q_h W M_t = V``."""
    Xh, Xt = p.space.X, p.time.X
    Wt = (Xh.T @ V @ Xt) / p.denom
    return Xh @ Wt @ Xt.T


def two_term_apply(M_h, Q_h, M_t, Q_t, W):
    return M_h @ (Q_t @ W.T).T + Q_h @ (M_t @ W.T).T
