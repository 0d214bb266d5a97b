import os

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings

from stk.discretize import SpaceGrid1D, TimeGrid, fem1d_matrices, heat_time_matrices

settings.register_profile(
    "stk",
    max_examples=int(os.environ.get("STK_HYPOTHESIS_EXAMPLES", "25")),
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("stk")


def random_spd(rng, n, shift=1.0):
    G = rng.standard_normal((n, n))
    return G.T @ G + shift * np.eye(n)


def heat_problem(n_h, n_t, T=1.0, rng=None, perturb=0.0):
    """1D FEM heat matrices on (0, 1); optional s.p.d. tridiagonal perturbation."""
    grid = TimeGrid(n_t, T)
    M, A = fem1d_matrices(SpaceGrid1D(0.0, 1.0, n_h))
    D, C = heat_time_matrices(grid)
    if perturb and rng is not None:
        # diagonally dominant symmetric tridiagonal bump keeps both matrices s.p.d.
        off = perturb * rng.uniform(0, 1, n_h - 1)
        diag = np.zeros(n_h)
        diag[:-1] += off
        diag[1:] += off
        bump = sp.diags([off, diag + perturb, off], [-1, 0, 1])
        A = (A + bump).tocsr()
        M = (M + 1e-2 * bump).tocsr()
    return grid, M, A, D, C


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record one PASS/FAIL line per acceptance criterion."""

    def report(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n    {line}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
