"""Rational Krylov Galerkin solver for ``M U D + A U C = F``.

The spatial basis grows as ``[F_1, (A - s_2 M)^{-1} M v_1, ...]`` with
poles chosen adaptively on the negative real axis, so every shifted
matrix ``A - s M`` stays symmetric positive definite.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .la_core import LowRank, SPDFactor, lowrank_truncate, numerical_rank, sym_gen_eig
from .sylvester import heat_operator, residual_norm_factored, solve_projected_heat

__all__ = [
    "RKSM",
    "RKSMState",
    "SolveReport",
    "adaptive_next_shift",
    "estimate_spectral_interval",
    "rksm_solve",
    "shift_misfit",
]

N_CANDIDATES = 200


@dataclass
class SolveReport:
    iterations: int = 0
    history: list = field(default_factory=list)
    mu_mem: int = 0
    rank: int = 0
    time_s: float = 0.0
    converged: bool = False
    stagnated: bool = False
    true_relres: float | None = None

    @property
    def relres(self):
        return self.history[-1] if self.history else 0.0

    def write_history(self, path):
        with open(path, "w") as fh:
            fh.write("iter,relres\n")
            for k, r in enumerate(self.history, start=1):
                fh.write(f"{k},{r:.16e}\n")


def estimate_spectral_interval(A, M, iters=30, factors=None, seed=0):
    """Bracket the eigenvalues of the pencil ``(A, M)``.

    Power iteration gives the top eigenvalue estimate, inverse iteration
    the bottom one; the returned interval is ``[lmin / 2, 2 * lmax]``.
    """
    n = A.shape[0]
    FA = factors[0] if factors else SPDFactor(A)
    FM = factors[1] if factors else SPDFactor(M)
    x0 = np.random.default_rng(seed).standard_normal(n)

    def rayleigh(x):
        return float(x @ (A @ x)) / float(x @ (M @ x))

    x = x0.copy()
    for _ in range(iters):
        x = FM.solve(A @ x)
        x /= np.linalg.norm(x)
    lmax = rayleigh(x)
    x = x0.copy()
    for _ in range(iters):
        x = FA.solve(M @ x)
        x /= np.linalg.norm(x)
    lmin = rayleigh(x)
    return lmin / 2.0, 2.0 * lmax


def shift_misfit(x, poles, ritz):
    """``log( prod |x - s| / prod |x + r| )`` for candidate points ``x``.

    ``ritz`` holds the (positive) Ritz values; the misfit measures the
    distance to their mirror images on the negative axis.
    """
    x = np.asarray(x, dtype=float)
    num = np.zeros_like(x)
    for s in poles:
        num += np.log(np.abs(x - s))
    den = np.zeros_like(x)
    for r in ritz:
        den += np.log(np.abs(x + r))
    return num - den


def _pick(candidates, values):
    best = np.max(values)
    tied = candidates[values == best]
    return float(tied[np.argmin(np.abs(tied))])


@dataclass
class RKSMState:
    V: np.ndarray
    shifts: list
    ritz: np.ndarray
    interval: tuple
    candidates: np.ndarray = None

    def __post_init__(self):
        if self.candidates is None:
            lo, hi = self.interval
            self.candidates = -np.logspace(np.log10(lo), np.log10(hi), N_CANDIDATES)


def adaptive_next_shift(state):
    """Next pole: the candidate maximizing the rational misfit.

    Candidates lie on the mirrored spectral interval; the misfit has the
    used poles as zeros and the current Ritz values as poles.  Ties go to
    the candidate of smallest magnitude.
    """
    cand = np.asarray(state.candidates, dtype=float)
    if cand.size == 0:
        raise RuntimeError("empty candidate set")
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = shift_misfit(cand, state.shifts, state.ritz)
    vals = np.nan_to_num(vals, nan=-np.inf)
    return _pick(cand, vals)


def _orthonormalize(V, W, drop_tol=1e-12):
    """Modified Gram-Schmidt of ``W`` against ``V`` (two passes), then rank-revealing QR."""
    nrm0 = np.linalg.norm(W, axis=0)
    W = np.array(W, dtype=float)
    for _ in range(2):
        for i in range(V.shape[1]):
            v = V[:, i]
            W -= np.outer(v, v @ W)
    Q, R, piv = la.qr(W, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    keep = d > drop_tol * max(np.max(nrm0, initial=0.0), np.finfo(float).tiny)
    Q = Q[:, keep]
    if V.shape[1] and Q.shape[1]:
        Q = Q - V @ (V.T @ Q)
        Q, _ = np.linalg.qr(Q)
    return Q


def _range_basis(Z):
    """Orthonormal basis of range(Z) from a pivoted QR with rank detection."""
    if Z.shape[1] == 0:
        return Z
    Q, R, _ = la.qr(Z, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > 1e-12 * d[0])) if d.size and d[0] > 0 else 0
    return Q[:, :r]


class RKSM:
    """Reusable solver for ``M U D + A U C = F`` with fixed matrices.

    Shifted factorizations and the spectral interval are cached across
    calls, which matters when the solver is used as a preconditioner.
    """

    def __init__(self, M, A, D, C, interval=None, initial_shift=None):
        self.M, self.A, self.D, self.C = M, A, D, C
        self.op = heat_operator(M, A, D, C)
        self._factors = {}
        self._interval = interval
        self.initial_shift = initial_shift

    @property
    def interval(self):
        if self._interval is None:
            self._interval = estimate_spectral_interval(self.A, self.M)
        return self._interval

    def shifted_factor(self, sigma):
        if sigma not in self._factors:
            self._factors[sigma] = SPDFactor((self.A - sigma * self.M).tocsr())
        return self._factors[sigma]

    def solve(self, F, tol=1e-8, maxit=100, fixed_iters=None, trunc_tol=1e-12, callback=None):
        """Return ``(U, report)``.

        ``fixed_iters`` runs exactly that many space expansions (counting the
        initial block) and skips the stopping test.  ``callback(it, V, Y)`` is
        called after every projected solve with ``U = V @ Y``.
        """
        t0 = _time.perf_counter()
        n_h, n_t = self.op.shape
        report = SolveReport()
        fnorm = F.norm()
        if fnorm == 0.0 or F.rank == 0:
            report.converged = True
            report.time_s = _time.perf_counter() - t0
            return LowRank.zeros(n_h, n_t), report

        # F = F1 F2^T with F1 of full column rank
        V = _range_basis(F.left)
        coeffs = V.T @ F.left
        F = LowRank(V @ coeffs, F.right)
        Gfull = coeffs @ F.right.T  # V^T F, exact since range(F.left) = range(V)
        block = V
        state = RKSMState(V, [], np.zeros(0), self.interval)
        MV = self.M @ V
        AV = self.A @ V
        H_M = V.T @ MV
        H_A = V.T @ AV
        best = None
        n_iter = fixed_iters if fixed_iters is not None else maxit
        mu = 0
        for it in range(1, n_iter + 1):
            H_M = 0.5 * (H_M + H_M.T)
            H_A = 0.5 * (H_A + H_A.T)
            eig = sym_gen_eig(H_A, H_M)
            state.ritz = eig.lambdas
            G = np.vstack([Gfull, np.zeros((V.shape[1] - Gfull.shape[0], n_t))])
            mu = max(mu, V.shape[1] + block.shape[1])
            report.iterations = it
            Y = solve_projected_heat(H_M, H_A, self.D, self.C, G, eig=eig)
            best = LowRank(V, Y.T)
            res = residual_norm_factored(self.op, best, F) / fnorm
            report.history.append(res)
            if callback is not None:
                callback(it, V, Y)
            if fixed_iters is None and res <= tol:
                report.converged = True
                break
            if it == n_iter:
                break
            if not state.shifts:
                sigma = self.initial_shift if self.initial_shift is not None else -self.interval[1]
            else:
                sigma = adaptive_next_shift(state)
            W = self.shifted_factor(sigma).solve(self.M @ block)
            Wn = _orthonormalize(V, W)
            state.shifts.append(sigma)
            if Wn.shape[1] == 0:
                # invariant subspace: the current projected solution is already exact
                break
            MW, AW = self.M @ Wn, self.A @ Wn
            H_M = np.block([[H_M, V.T @ MW], [Wn.T @ MV, Wn.T @ MW]])
            H_A = np.block([[H_A, V.T @ AW], [Wn.T @ AV, Wn.T @ AW]])
            V = np.hstack([V, Wn])
            MV = np.hstack([MV, MW])
            AV = np.hstack([AV, AW])
            state.V = V
            block = Wn
        report.mu_mem = mu
        self.last_state = state
        U = best
        if trunc_tol is not None:
            Ut = lowrank_truncate(U, trunc_tol)
            res_t = residual_norm_factored(self.op, Ut, F) / fnorm
            if res_t <= max(tol, report.history[-1]):
                U = Ut
                report.history[-1] = res_t
        report.converged = fixed_iters is not None or report.history[-1] <= tol
        report.rank = numerical_rank(U, 1e-8)
        report.time_s = _time.perf_counter() - t0
        return U, report


def rksm_solve(M, A, D, C, F, tol=1e-8, maxit=100, fixed_iters=None, interval=None):
    """Solve ``M U D + A U C = F`` for a factored ``F``; returns ``(U, SolveReport)``."""
    solver = RKSM(M, A, D, C, interval=interval)
    return solver.solve(F, tol=tol, maxit=maxit, fixed_iters=fixed_iters)
