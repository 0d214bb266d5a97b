"""Crank-Nicolson time marching for ``M u' + A u = f``, used as an oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .la_core import SPDFactor

__all__ = ["Trajectory", "crank_nicolson"]


@dataclass(frozen=True)
class Trajectory:
    """Column ``l`` holds the coefficients at ``t^(l+1)``; the full array is kept."""

    U: np.ndarray
    dt: float

    @property
    def N_t(self):
        return self.U.shape[1]

    @property
    def mu_mem(self):
        return self.N_t

    def write_csv(self, path):
        n_h, n_t = self.U.shape
        header = ",".join(f"t{l + 1}" for l in range(n_t))
        np.savetxt(path, self.U, delimiter=",", header=header, comments="", fmt="%.17g")


def crank_nicolson(M, A, rhs_columns, grid, u0=None):
    """Solve ``(M + dt/2 A) u^l = (M - dt/2 A) u^(l-1) + F[:, l]`` for ``l = 1..N_t``.

    ``rhs_columns`` is an ``(N_h, N_t)`` array or a callable returning column
    ``l`` (0-based).  The system matrix is factored once.
    """
    n_h = M.shape[0]
    dt = grid.dt
    lhs = SPDFactor((M + 0.5 * dt * A).tocsr() if hasattr(M, "tocsr") else M + 0.5 * dt * A)
    rhs_op = M - 0.5 * dt * A
    column = rhs_columns if callable(rhs_columns) else (lambda l: rhs_columns[:, l])
    U = np.empty((n_h, grid.N_t))
    u = np.zeros(n_h) if u0 is None else np.asarray(u0, dtype=float)
    for l in range(grid.N_t):
        u = lhs.solve(rhs_op @ u + column(l))
        U[:, l] = u
    return Trajectory(U, dt)
