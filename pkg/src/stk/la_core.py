"""Linear-algebra kernels shared by all solvers.

Sparse matrices are plain ``scipy.sparse`` matrices; dense ones are
``numpy`` arrays.  The only package-level value types are :class:`LowRank`
(a factored matrix ``left @ right.T``) and :class:`EigPair`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DefinitenessError

__all__ = [
    "EigPair",
    "LowRank",
    "SPDFactor",
    "lowrank_truncate",
    "numerical_rank",
    "read_matrix",
    "spd_solve",
    "sym_gen_eig",
    "write_matrix",
]


def _check_symmetric(Q, name, rtol=1e-12):
    if sp.issparse(Q):
        diff = abs(Q - Q.T).max() if Q.nnz else 0.0
        scale = abs(Q).max() if Q.nnz else 0.0
    else:
        diff = np.max(np.abs(Q - Q.T)) if Q.size else 0.0
        scale = np.max(np.abs(Q)) if Q.size else 0.0
    if diff > rtol * max(scale, np.finfo(float).tiny):
        raise ValueError(f"{name} is not symmetric (max asymmetry {diff:.3e})")


def _lower_bandwidth(M):
    if sp.issparse(M):
        coo = M.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(coo.row - coo.col).clip(min=0))
    rows, cols = np.nonzero(np.tril(M))
    return int(np.max(rows - cols)) if rows.size else 0


class SPDFactor:
    """Banded Cholesky factor of a symmetric positive definite matrix.

    The bandwidth is taken from the natural ordering of ``M``; this is
    adequate for 1D meshes and tensor-product 2D meshes.  The factor is
    computed once and reused by :meth:`solve`.
    """

    def __init__(self, M):
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        _check_symmetric(M, "M")
        n = M.shape[0]
        u = _lower_bandwidth(M)
        ab = np.zeros((u + 1, n))
        if sp.issparse(M):
            Mc = M.tocsc() if u else M.tocsr()
            diags = {d: Mc.diagonal(-d) for d in range(u + 1)}
        else:
            diags = {d: np.diagonal(M, -d) for d in range(u + 1)}
        for d, vals in diags.items():
            ab[d, : n - d] = vals
        try:
            self._cb = la.cholesky_banded(ab, lower=True, check_finite=True)
        except la.LinAlgError as exc:
            raise DefinitenessError(f"matrix is not positive definite: {exc}") from None
        self.n = n
        self.bandwidth = u

    def solve(self, B):
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.n:
            raise ValueError(f"right-hand side has {B.shape[0]} rows, expected {self.n}")
        if B.size == 0:
            return B.copy()
        return la.cho_solve_banded((self._cb, True), B, check_finite=False)


def spd_solve(M, B):
    """Solve ``M X = B`` for symmetric positive definite ``M``."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != M.shape[0]:
        raise ValueError(f"dimension mismatch: M is {M.shape}, B has {B.shape[0]} rows")
    return SPDFactor(M).solve(B)


@dataclass(frozen=True)
class EigPair:
    """Generalized eigendecomposition ``Q X = M X diag(lambdas)``, ``X.T M X = I``."""

    lambdas: np.ndarray
    X: np.ndarray


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def sym_gen_eig(Q, M):
    """Eigendecomposition of the symmetric-definite pencil ``(Q, M)``.

    Uses ``M = L L.T``, the symmetric eigendecomposition of
    ``L^{-1} Q L^{-T}`` and the back-transform ``X = L^{-T} Z``.
    Eigenvalues are returned in ascending order.
    """
    Q = _dense(Q)
    M = _dense(M)
    if Q.shape != M.shape or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"pencil shapes do not match: {Q.shape} vs {M.shape}")
    _check_symmetric(Q, "Q")
    _check_symmetric(M, "M")
    try:
        L = la.cholesky(M, lower=True)
    except la.LinAlgError as exc:
        raise DefinitenessError(f"M is not positive definite: {exc}") from None
    C = la.solve_triangular(L, Q, lower=True)
    C = la.solve_triangular(L, C.T, lower=True)
    C = 0.5 * (C + C.T)
    lambdas, Z = np.linalg.eigh(C)
    X = la.solve_triangular(L.T, Z, lower=False)
    return EigPair(lambdas, X)


@dataclass(frozen=True)
class LowRank:
    """Matrix held as ``left @ right.T``; zero columns encode the zero matrix."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.ndim == 1:
            left = left[:, None]
        if right.ndim == 1:
            right = right[:, None]
        if left.shape[1] != right.shape[1]:
            raise ValueError(
                f"factor column counts differ: {left.shape[1]} vs {right.shape[1]}"
            )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros((n, 0)), np.zeros((m, 0)))

    @classmethod
    def from_dense(cls, X, tol=1e-14):
        """Compress a dense matrix with a truncated SVD."""
        X = np.asarray(X, dtype=float)
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        r = _tail_rank(s, tol * np.sqrt(np.sum(s**2)))
        return cls(U[:, :r] * s[:r], Vt[:r].T)

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    @property
    def rank(self):
        return self.left.shape[1]

    def to_dense(self):
        return self.left @ self.right.T

    def __add__(self, other):
        return LowRank(np.hstack([self.left, other.left]), np.hstack([self.right, other.right]))

    def __sub__(self, other):
        return LowRank(np.hstack([self.left, other.left]), np.hstack([self.right, -other.right]))

    def __mul__(self, alpha):
        return LowRank(self.left * alpha, self.right)

    __rmul__ = __mul__

    def __neg__(self):
        return LowRank(-self.left, self.right)

    def dot(self, other):
        """Frobenius inner product computed from the factors."""
        return float(np.sum((other.left.T @ self.left) * (other.right.T @ self.right)))

    def norm(self):
        if self.rank == 0:
            return 0.0
        Rl = np.linalg.qr(self.left, mode="r")
        Rr = np.linalg.qr(self.right, mode="r")
        return float(np.linalg.norm(Rl @ Rr.T))


def _tail_rank(s, atol):
    """Smallest r such that the root-sum-square of s[r:] is at most atol."""
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
    # tail[r] = ||s[r:]||; find the first r where it drops to atol
    keep = np.nonzero(tail > atol)[0]
    return int(keep[-1] + 1) if keep.size else 0


def _core_svd(L):
    Ql, Rl = np.linalg.qr(L.left)
    Qr, Rr = np.linalg.qr(L.right)
    U, s, Vt = np.linalg.svd(Rl @ Rr.T)
    return Ql, Qr, U, s, Vt


def lowrank_truncate(L, tol, atol=None):
    """Recompress ``L`` to the smallest SVD rank within ``tol * ||L||_F``.

    If ``atol`` is given, it is used as the absolute error budget instead.
    """
    n, m = L.shape
    if L.rank == 0:
        return LowRank.zeros(n, m)
    if not 0 < tol < 1 and atol is None:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    Ql, Qr, U, s, Vt = _core_svd(L)
    budget = atol if atol is not None else tol * np.sqrt(np.sum(s**2))
    r = _tail_rank(s, budget)
    return LowRank(Ql @ (U[:, :r] * s[:r]), Qr @ Vt[:r].T)


def numerical_rank(L, tol=1e-8):
    """Number of singular values above ``tol * sigma_max``."""
    if isinstance(L, LowRank):
        if L.rank == 0:
            return 0
        s = _core_svd(L)[3]
    else:
        s = np.linalg.svd(np.asarray(L), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def write_matrix(path, A, comment=""):
    """Write a sparse or dense matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def read_matrix(path):
    return sp.csr_matrix(scipy.io.mmread(str(path)))
