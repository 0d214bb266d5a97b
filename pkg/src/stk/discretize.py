"""Temporal and spatial matrices for the space-time heat and wave discretizations.

Heat: hats in time for the trial space, element indicators for the test
space, linear finite elements in space.  Wave: clamped B-splines in time
and space, with boundary functions removed to satisfy the end conditions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SpaceGrid1D",
    "SplineBasis",
    "TimeGrid",
    "fem1d_matrices",
    "fem2d_matrices",
    "gauss_legendre",
    "heat_time_matrices",
    "spline_basis",
    "wave_bases",
    "wave_l2_error",
    "wave_solution_values",
    "wave_space_matrices",
    "wave_time_matrices",
]


@dataclass(frozen=True)
class TimeGrid:
    N_t: int
    T: float

    def __post_init__(self):
        if self.N_t < 1:
            raise ValueError(f"N_t must be >= 1, got {self.N_t}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self):
        return self.T / self.N_t

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.N_t + 1)

    # uniform grids on (0, T); lets spline_basis treat time and space alike
    @property
    def a(self):
        return 0.0

    @property
    def b(self):
        return self.T

    @property
    def n_elements(self):
        return self.N_t


@dataclass(frozen=True)
class SpaceGrid1D:
    """Uniform mesh of (a, b).

    ``N_h`` counts the active hat functions, i.e. interior nodes, so the
    mesh has ``N_h + 1`` elements.
    """

    a: float
    b: float
    N_h: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"need b > a, got ({self.a}, {self.b})")
        if self.N_h < 1:
            raise ValueError(f"N_h must be >= 1, got {self.N_h}")

    @property
    def n_elements(self):
        return self.N_h + 1

    @property
    def h(self):
        return (self.b - self.a) / self.n_elements

    @property
    def nodes(self):
        return np.linspace(self.a, self.b, self.n_elements + 1)

    @property
    def interior(self):
        return self.nodes[1:-1]


@dataclass(frozen=True)
class ElementGrid:
    """``n_elements`` uniform elements on (a, b); used by the spline bases."""

    a: float
    b: float
    n_elements: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"need b > a, got ({self.a}, {self.b})")


def gauss_legendre(npoints, interval=(-1.0, 1.0)):
    """Gauss-Legendre nodes and weights mapped to ``interval``."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    a, b = interval
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_gauss(breaks, npoints):
    """Nodes and weights of an element-wise Gauss rule on consecutive ``breaks``."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    lo = np.asarray(breaks[:-1])[:, None]
    half = 0.5 * np.diff(breaks)[:, None]
    return (lo + half * (x + 1.0)).ravel(), (half * w).ravel()


def heat_time_matrices(grid):
    """Return ``(D, C)`` with ``D[k, l] = (d/dt sigma^k, tau^l)``, ``C[k, l] = (sigma^k, tau^l)``."""
    n, dt = grid.N_t, grid.dt
    D = sp.diags([np.ones(n), -np.ones(n - 1)], [0, 1], shape=(n, n), format="csr")
    C = sp.diags([np.full(n, dt / 2), np.full(n - 1, dt / 2)], [0, 1], shape=(n, n), format="csr")
    return D, C


def fem1d_matrices(grid):
    """Mass and stiffness matrices of linear elements with Dirichlet conditions."""
    n, h = grid.N_h, grid.h
    one = np.ones(n)
    M = sp.diags([one[:-1] * h / 6, one * 2 * h / 3, one[:-1] * h / 6], [-1, 0, 1], format="csr")
    A = sp.diags([-one[:-1] / h, one * 2 / h, -one[:-1] / h], [-1, 0, 1], format="csr")
    return M, A


def fem2d_matrices(grid_x, grid_y):
    """Bilinear elements on a tensor mesh; the y index runs fastest."""
    Mx, Ax = fem1d_matrices(grid_x)
    My, Ay = fem1d_matrices(grid_y)
    M = sp.kron(Mx, My, format="csr")
    A = (sp.kron(Ax, My) + sp.kron(Mx, Ay)).tocsr()
    return M, A


def hat_values(grid, x):
    """Values and slopes of the interior hats of ``grid`` at points ``x``.

    Returns sparse ``(len(x), N_h)`` matrices.
    """
    x = np.asarray(x, dtype=float)
    h = grid.h
    s = (x - grid.a) / h
    elem = np.clip(np.floor(s).astype(int), 0, grid.n_elements - 1)
    frac = s - elem
    # element e spans nodes e, e+1; interior hat j sits on node j+1
    rows = np.concatenate([np.arange(x.size), np.arange(x.size)])
    cols = np.concatenate([elem - 1, elem])
    vals = np.concatenate([1.0 - frac, frac])
    dvals = np.concatenate([np.full(x.size, -1.0 / h), np.full(x.size, 1.0 / h)])
    ok = (cols >= 0) & (cols < grid.N_h)
    shape = (x.size, grid.N_h)
    V = sp.csr_matrix((vals[ok], (rows[ok], cols[ok])), shape=shape)
    dV = sp.csr_matrix((dvals[ok], (rows[ok], cols[ok])), shape=shape)
    return V, dV


# -- B-splines ---------------------------------------------------------------

END_CONDITIONS = ("none", "right-value-slope", "dirichlet")


def clamped_knots(a, b, n_elements, degree):
    inner = np.linspace(a, b, n_elements + 1)
    return np.concatenate([np.full(degree, a), inner, np.full(degree, b)])


def _bspline_all_degrees(knots, degree, x):
    """Cox-de Boor table: entry d holds all degree-d B-splines at x."""
    t = knots
    nk = t.size
    left, right = t[:-1], t[1:]
    B = ((x[:, None] >= left) & (x[:, None] < right)).astype(float)
    # close the last non-empty interval on the right
    last = np.nonzero(right > left)[0][-1]
    B[x >= t[-1], last] = 1.0
    tables = [B]
    for d in range(1, degree + 1):
        nb = nk - 1 - d
        out = np.zeros((x.size, nb))
        for i in range(nb):
            den1 = t[i + d] - t[i]
            den2 = t[i + d + 1] - t[i + 1]
            if den1 > 0:
                out[:, i] += (x - t[i]) / den1 * B[:, i]
            if den2 > 0:
                out[:, i] += (t[i + d + 1] - x) / den2 * B[:, i + 1]
        B = out
        tables.append(B)
    return tables


def _derivative_step(knots, q, vals):
    """Map degree q-1 data to the derivative combination for degree q."""
    t = knots
    nb = vals.shape[1] - 1
    out = np.zeros((vals.shape[0], nb))
    for i in range(nb):
        den1 = t[i + q] - t[i]
        den2 = t[i + q + 1] - t[i + 1]
        if den1 > 0:
            out[:, i] += q / den1 * vals[:, i]
        if den2 > 0:
            out[:, i] -= q / den2 * vals[:, i + 1]
    return out


def bspline_eval(knots, degree, x, nder=0):
    """Values and derivatives up to ``nder`` of every B-spline on ``knots``.

    Returns an array of shape ``(nder + 1, len(x), len(knots) - degree - 1)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    tables = _bspline_all_degrees(knots, degree, x)
    out = [tables[degree]]
    for k in range(1, nder + 1):
        if k > degree:
            out.append(np.zeros_like(tables[degree]))
            continue
        vals = tables[degree - k]
        for q in range(degree - k + 1, degree + 1):
            vals = _derivative_step(knots, q, vals)
        out.append(vals)
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Clamped uniform B-spline basis with end conditions imposed by removal."""

    degree: int
    knots: np.ndarray
    active: np.ndarray
    a: float
    b: float
    n_elements: int
    end_conditions: str = "none"
    _quad: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self):
        return self.active.size

    @property
    def n_full(self):
        return self.knots.size - self.degree - 1

    @property
    def breaks(self):
        return np.linspace(self.a, self.b, self.n_elements + 1)

    def evaluate(self, x, nder=0):
        """Active basis values/derivatives, shape ``(nder + 1, len(x), size)``."""
        return bspline_eval(self.knots, self.degree, x, nder)[:, :, self.active]

    def quadrature(self, npoints=None):
        """Composite Gauss rule and derivative tables (0..2) at its nodes."""
        npoints = npoints or self.degree + 1
        if npoints not in self._quad:
            x, w = composite_gauss(self.breaks, npoints)
            tabs = self.evaluate(x, nder=2)
            self._quad[npoints] = (x, w, [sp.csr_matrix(tb) for tb in tabs])
        return self._quad[npoints]

    def dump_csv(self, path, index, npoints=None):
        """Write ``t,value,d1,d2`` for active function ``index`` at quadrature nodes."""
        x, _, tabs = self.quadrature(npoints)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value", "d1", "d2"])
            col = [tb[:, index].toarray().ravel() for tb in tabs]
            for row in zip(x, *col):
                w.writerow([repr(float(v)) for v in row])


def spline_basis(degree, grid, end_conditions="none"):
    """Build a clamped B-spline basis of ``degree`` over ``grid``'s elements.

    ``end_conditions``: ``"none"``, ``"right-value-slope"`` (drops the last
    two functions, so value and slope vanish at the right end) or
    ``"dirichlet"`` (drops the first and last function).
    """
    if degree not in (2, 3):
        raise ValueError(f"degree must be 2 or 3, got {degree}")
    if end_conditions not in END_CONDITIONS:
        raise ValueError(f"unknown end conditions {end_conditions!r}")
    n_el = grid.n_elements
    if n_el < 1:
        raise ValueError("need at least one element")
    knots = clamped_knots(grid.a, grid.b, n_el, degree)
    n_full = knots.size - degree - 1
    idx = np.arange(n_full)
    if end_conditions == "right-value-slope":
        idx = idx[:-2]
    elif end_conditions == "dirichlet":
        idx = idx[1:-1]
    if idx.size == 0:
        raise ValueError(
            f"too few knots: degree {degree} on {n_el} element(s) leaves no "
            f"basis function under {end_conditions!r}"
        )
    return SplineBasis(degree, knots, idx, float(grid.a), float(grid.b), n_el, end_conditions)


def _dropped(end_conditions):
    return {"none": 0, "right-value-slope": 2, "dirichlet": 2}[end_conditions]


def spline_basis_with_size(degree, a, b, size, end_conditions):
    """Basis on (a, b) whose element count is chosen so it keeps ``size`` functions."""
    n_el = size + _dropped(end_conditions) - degree
    if n_el < 1:
        raise ValueError(f"cannot build {size} degree-{degree} functions under {end_conditions!r}")
    return spline_basis(degree, ElementGrid(a, b, n_el), end_conditions)


def wave_bases(N_h, N_t, T=1.0, degree=3, domain=(0.0, 1.0)):
    """Space and time spline bases with exactly ``N_h`` and ``N_t`` functions."""
    space = spline_basis_with_size(degree, domain[0], domain[1], N_h, "dirichlet")
    time = spline_basis_with_size(degree, 0.0, T, N_t, "right-value-slope")
    return space, time


def _gram(P, w, R):
    return (P.T @ sp.diags(w) @ R).tocsr()


def _symmetrize(S):
    return ((S + S.T) * 0.5).tocsr()


def wave_time_matrices(basis, npoints=None):
    """Return ``(Q, D, M)``: ``(r'', r'')``, ``(r''^k, r^l)`` and ``(r, r)`` Gram matrices."""
    if basis.end_conditions != "right-value-slope":
        raise ValueError("wave time basis needs right-value-slope end conditions")
    npoints = npoints or basis.degree + 1
    assert 2 * npoints - 1 >= 2 * basis.degree, "quadrature order too low"
    _, w, (R0, _, R2) = basis.quadrature(npoints)
    Q = _symmetrize(_gram(R2, w, R2))
    D = _gram(R2, w, R0)
    M = _symmetrize(_gram(R0, w, R0))
    return Q, D, M


def wave_space_matrices(basis, npoints=None):
    """Return ``(M, A, Q)``: ``(psi, psi)``, ``(psi', psi')``, ``(psi'', psi'')``."""
    if basis.degree < 2:
        raise ValueError("need degree >= 2 for an H^2-conforming space")
    if basis.end_conditions != "dirichlet":
        raise ValueError("wave space basis needs dirichlet end conditions")
    npoints = npoints or basis.degree + 1
    _, w, (P0, P1, P2) = basis.quadrature(npoints)
    M = _symmetrize(_gram(P0, w, P0))
    A = _symmetrize(_gram(P1, w, P1))
    Q = _symmetrize(_gram(P2, w, P2))
    return M, A, Q


def wave_solution_values(U, space, time, npoints=None):
    """Trial function ``sum U[i, k] (r_k'' psi_i - r_k psi_i'')`` on the tensor Gauss grid.

    Returns ``(t, x, wt, wx, values)`` with ``values`` of shape ``(len(t), len(x))``.
    """
    npoints = npoints or max(space.degree, time.degree) + 4
    x, wx, (P0, _, P2) = space.quadrature(npoints)
    t, wt, (R0, _, R2) = time.quadrature(npoints)
    U = U.to_dense() if hasattr(U, "to_dense") else np.asarray(U, dtype=float)
    if U.shape != (space.size, time.size):
        raise ValueError(f"coefficient shape {U.shape} does not match ({space.size}, {time.size})")
    vals = R2 @ (P0 @ U).T - R0 @ (P2 @ U).T
    return t, x, wt, wx, np.asarray(vals)


def wave_l2_error(U, space, time, exact, npoints=None):
    """``L2(I x Omega)`` distance between the reconstructed trial function and ``exact(t, x)``.

    ``exact`` takes 1D arrays ``t`` and ``x`` and returns a ``(len(t), len(x))`` array.
    """
    t, x, wt, wx, vals = wave_solution_values(U, space, time, npoints)
    diff = vals - exact(t, x)
    return float(np.sqrt(wt @ diff**2 @ wx))
