"""Separable right-hand sides ``f(t, x) ~ sum_p theta_p(t) f_p(x)`` and their projection.

The projected right-hand side is returned in factored form ``F = G @ H.T``
with ``G`` of shape ``(N_h, P)`` (space) and ``H`` of shape ``(N_t, P)``
(time).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .discretize import SpaceGrid1D, composite_gauss, hat_values
from .la_core import LowRank

__all__ = [
    "RHSFactors",
    "SeparableRHS",
    "builtin_rhs",
    "eim_separate",
    "load_rhs_csv",
    "project_rhs_heat",
    "project_rhs_wave",
    "wave_exact_solution",
]


@dataclass
class SeparableRHS:
    """Sum of ``P`` products of a temporal and a spatial factor.

    Factors are callables.  For an EIM result the factors interpolate the
    sampled columns/rows linearly and ``interp_points`` records the
    (t-index, x-index) magic points.
    """

    theta: list
    f: list
    interp_points: list = field(default_factory=list)
    tol: float = 0.0
    error: float = 0.0
    truncated: bool = False
    t_samples: np.ndarray | None = None
    x_samples: np.ndarray | None = None
    theta_samples: np.ndarray | None = None
    f_samples: np.ndarray | None = None

    def __post_init__(self):
        if len(self.theta) != len(self.f):
            raise ValueError("temporal and spatial factor counts differ")

    @property
    def P(self):
        return len(self.theta)

    def __call__(self, t, x):
        """Evaluate on the tensor grid ``t x x``; returns ``(len(t), len(x))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((t.size, x.shape[0]))
        for th, fp in zip(self.theta, self.f):
            out += np.outer(th(t), fp(x))
        return out


@dataclass(frozen=True)
class RHSFactors:
    G: np.ndarray
    H: np.ndarray

    def as_lowrank(self):
        return LowRank(self.G, self.H)

    def to_dense(self):
        return self.G @ self.H.T


def eim_separate(f_samples, tol, P_max, t=None, x=None):
    """Greedy empirical interpolation of a sampled bivariate function.

    Each step picks the entry of largest residual and subtracts the
    residual's column times its row scaled by the pivot, which makes the
    approximation interpolate exactly at every selected point.

    ``t`` and ``x`` are the sample coordinates used to turn the columns and
    rows into (piecewise linear) callables; they default to indices.
    """
    F = np.array(f_samples, dtype=float)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if P_max < 1:
        raise ValueError(f"P_max must be >= 1, got {P_max}")
    nt, nx = F.shape
    t = np.arange(nt, dtype=float) if t is None else np.asarray(t, dtype=float)
    x = np.arange(nx, dtype=float) if x is None else np.asarray(x, dtype=float)
    fmax = np.max(np.abs(F)) if F.size else 0.0
    R = F.copy()
    cols, rows, points, errors = [], [], [], []
    err = fmax
    while err > tol * fmax and len(points) < P_max:
        i, j = np.unravel_index(np.argmax(np.abs(R)), R.shape)
        u = R[:, j].copy()
        v = R[i, :] / R[i, j]
        R -= np.outer(u, v)
        # interpolation leaves exact zeros on the selected row and column
        R[i, :] = 0.0
        R[:, j] = 0.0
        cols.append(u)
        rows.append(v)
        points.append((int(i), int(j)))
        err = np.max(np.abs(R))
        errors.append(err)
    theta = [_interp1d(t, c) for c in cols]
    fs = [_interp1d(x, r) for r in rows]
    return SeparableRHS(
        theta,
        fs,
        interp_points=points,
        tol=tol,
        error=float(err),
        truncated=bool(err > tol * fmax),
        t_samples=t,
        x_samples=x,
        theta_samples=np.array(cols).T if cols else np.zeros((nt, 0)),
        f_samples=np.array(rows).T if rows else np.zeros((nx, 0)),
    )


def _interp1d(grid, values):
    return lambda s: np.interp(s, grid, values)


def _time_integrals(theta, grid, trapezoidal, npoints):
    """``H[l] = integral of theta over the l-th element``, or its trapezoidal rule."""
    nodes = grid.nodes
    if trapezoidal:
        vals = np.asarray(theta(nodes), dtype=float) * np.ones(nodes.size)
        return 0.5 * grid.dt * (vals[:-1] + vals[1:])
    tq, wq = composite_gauss(nodes, npoints)
    vals = np.asarray(theta(tq), dtype=float) * np.ones(tq.size)
    return (vals * wq).reshape(grid.N_t, npoints).sum(axis=1)


def _space_loads_1d(f, grid, npoints):
    xq, wq = composite_gauss(grid.nodes, npoints)
    V, _ = hat_values(grid, xq)
    vals = np.asarray(f(xq), dtype=float) * np.ones(xq.size)
    return V.T @ (vals * wq)


def _space_loads_2d(f, gx, gy, npoints):
    xq, wx = composite_gauss(gx.nodes, npoints)
    yq, wy = composite_gauss(gy.nodes, npoints)
    Vx, _ = hat_values(gx, xq)
    Vy, _ = hat_values(gy, yq)
    X, Y = np.meshgrid(xq, yq, indexing="ij")
    vals = np.asarray(f(X, Y), dtype=float) * np.ones(X.shape)
    G = Vx.T @ ((wx[:, None] * vals * wy[None, :]) @ Vy)
    return np.asarray(G).ravel()


def project_rhs_heat(rhs, time, space, trapezoidal_time=False, npoints=6):
    """Project onto element indicators in time and hats in space.

    ``space`` is a :class:`SpaceGrid1D` or a pair of them (2D tensor mesh;
    spatial factors are then called as ``f(x, y)``).
    """
    Hcols, Gcols = [], []
    for th, fp in zip(rhs.theta, rhs.f):
        Hcols.append(_time_integrals(th, time, trapezoidal_time, npoints))
        if isinstance(space, SpaceGrid1D):
            Gcols.append(_space_loads_1d(fp, space, npoints))
        elif isinstance(space, (tuple, list)) and len(space) == 2:
            Gcols.append(_space_loads_2d(fp, space[0], space[1], npoints))
        else:
            raise ValueError(f"unsupported space discretization {space!r}")
    n_h = space.N_h if isinstance(space, SpaceGrid1D) else space[0].N_h * space[1].N_h
    G = np.column_stack(Gcols) if Gcols else np.zeros((n_h, 0))
    H = np.column_stack(Hcols) if Hcols else np.zeros((time.N_t, 0))
    return RHSFactors(G, H)


def project_rhs_wave(rhs, time_basis, space_basis, npoints=None):
    """Project onto the spline test functions in time and space."""
    nq_t = npoints or time_basis.degree + 4
    nq_x = npoints or space_basis.degree + 4
    tq, wt, (Rt, _, _) = time_basis.quadrature(nq_t)
    xq, wx, (Px, _, _) = space_basis.quadrature(nq_x)
    Hcols, Gcols = [], []
    for th, fp in zip(rhs.theta, rhs.f):
        Hcols.append(Rt.T @ (np.asarray(th(tq), dtype=float) * np.ones(tq.size) * wt))
        Gcols.append(Px.T @ (np.asarray(fp(xq), dtype=float) * np.ones(xq.size) * wx))
    G = np.column_stack(Gcols) if Gcols else np.zeros((space_basis.size, 0))
    H = np.column_stack(Hcols) if Hcols else np.zeros((time_basis.size, 0))
    return RHSFactors(G, H)


def builtin_rhs(name, dim=1):
    """Named analytic right-hand sides.

    ``heat-ex1``: ``10 t sin(t)`` times ``cos(pi x / 2)`` in every space
    direction, on (-1, 1)^dim.  ``wave-ex2``: ``(2 + 4 pi^2 t^2) sin(2 pi x)``,
    whose solution with zero initial data is ``t^2 sin(2 pi x)``.
    ``wave-ex2-literal`` uses a leading ``1`` instead of ``2``.
    """
    if name == "heat-ex1":
        theta = lambda t: 10.0 * np.sin(t) * t
        if dim == 1:
            fx = lambda x: np.cos(0.5 * np.pi * x)
        elif dim == 2:
            fx = lambda x, y: np.cos(0.5 * np.pi * x) * np.cos(0.5 * np.pi * y)
        else:
            raise ValueError(f"unsupported dimension {dim}")
        return SeparableRHS([theta], [fx])
    if name in ("wave-ex2", "wave-ex2-literal"):
        c = 2.0 if name == "wave-ex2" else 1.0
        return SeparableRHS(
            [lambda t: c + 4.0 * np.pi**2 * t**2],
            [lambda x: np.sin(2.0 * np.pi * x)],
        )
    raise ValueError(f"unknown built-in right-hand side {name!r}")


def wave_exact_solution(t, x):
    return np.outer(np.asarray(t) ** 2, np.sin(2.0 * np.pi * np.asarray(x)))


def load_rhs_csv(path, tol=1e-10, P_max=50):
    """Read ``t,x,f`` triples on a full tensor grid and separate them with EIM."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "x", "f"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header t,x,f")
        rows = [(float(r["t"]), float(r["x"]), float(r["f"])) for r in reader]
    data = np.array(rows)
    t = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    if t.size * x.size != data.shape[0]:
        raise ValueError(f"{path}: samples do not form a full t-x grid")
    F = np.zeros((t.size, x.size))
    F[np.searchsorted(t, data[:, 0]), np.searchsorted(x, data[:, 1])] = data[:, 2]
    return eim_separate(F, tol, P_max, t=t, x=x)
