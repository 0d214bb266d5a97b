"""Experiment driver: builds heat or wave problems, runs solvers, writes CSV rows.

Usage::

    stk heat --nh 199 --nt 100,300,500 --T 10 --solver rksm,cn --oracle cn
    stk wave --nh 256 --nt 256 --solver gmres-lyap --history hist.csv

Exit codes: 0 success, 1 usage error, 2 non-convergence (unless
``--allow-nonconverged``), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import statistics
import sys
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import discretize as disc
from .cn_baseline import crank_nicolson
from .errors import STKError, UsageError
from .la_core import numerical_rank
from .outer_krylov import GmresConfig, gmres, lr_fgmres, rksm_preconditioner, two_term_preconditioner, wave_operator_apply
from .rhs_sep import builtin_rhs, load_rhs_csv, project_rhs_heat, project_rhs_wave, wave_exact_solution
from .rksm import RKSM, estimate_spectral_interval
from .sylvester import apply_kron, build_two_term_precond, heat_operator, residual_norm_factored, wave_operator

__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "ResultRow",
    "main",
    "parse_config",
    "run_experiment",
    "run_heat_experiment",
    "run_wave_experiment",
]

CSV_HEADER = ["method", "N_h", "N_t", "iters", "mu_mem", "rank", "time_s", "relres", "err_oracle"]
SOLVERS = {"heat": ("rksm", "lrfgmres", "cn", "dense"), "wave": ("gmres-lyap", "dense")}
DEFAULT_RHS = {"heat": "heat-ex1", "wave": "wave-ex2-literal"}
DEFAULT_T = {"heat": 10.0, "wave": 1.0}
DENSE_LIMIT = 200_000


@dataclass
class ExperimentConfig:
    problem: str
    N_h: tuple
    N_t: tuple
    solvers: tuple
    N_y: int | None = None
    T: float = 1.0
    rhs: str = ""
    tol: float = 1e-8
    maxit: int = 100
    oracle: str | None = None
    trapezoidal_time: bool = False
    history: str | None = None
    out: str | None = None
    seed: int = 0
    allow_nonconverged: bool = False
    jobs: int = 1
    repeat: int = 1
    timing: bool = True
    restart: int | None = None
    precond_iters: int = 5
    trunc_tol: float = 1e-10

    def spatial_size(self, nh):
        return nh * self.N_y if self.N_y else nh


@dataclass
class ResultRow:
    method: str
    N_h: int
    N_t: int
    iters: int
    mu_mem: int
    rank: int
    time_s: float
    relres: float
    err_oracle: float | None = None
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    def csv_fields(self, timing=True):
        err = "" if self.err_oracle is None else f"{self.err_oracle:.6e}"
        t = f"{self.time_s:.4f}" if timing else ""
        return [self.method, self.N_h, self.N_t, self.iters, self.mu_mem, self.rank, t, f"{self.relres:.6e}", err]


# ---------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        vals = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError("empty size list")
    return vals


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _opt_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


# key -> (converter, default); file keys and flag names share these spellings
_OPTIONS = {
    "problem": (str, None),
    "nh": (_int_list, None),
    "ny": (_opt_int, None),
    "nt": (_int_list, None),
    "T": (float, None),
    "solver": (str, None),
    "rhs": (str, None),
    "tol": (float, 1e-8),
    "maxit": (int, 100),
    "oracle": (str, None),
    "trapezoidal-time": (_bool, False),
    "history": (str, None),
    "out": (str, None),
    "seed": (int, 0),
    "allow-nonconverged": (_bool, False),
    "jobs": (int, 1),
    "repeat": (int, 1),
    "no-timing": (_bool, False),
    "restart": (_opt_int, None),
    "precond-iters": (int, 5),
    "trunc-tol": (float, 1e-10),
}
_FLAGS = {"trapezoidal-time", "allow-nonconverged", "no-timing"}


def _build_parser():
    p = _Parser(prog="stk", description="Space-time heat and wave solver experiments.")
    p.add_argument("problem", nargs="?", choices=sorted(SOLVERS), help="problem family")
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    for key in _OPTIONS:
        if key == "problem":
            continue
        if key in _FLAGS:
            p.add_argument(f"--{key}", action="store_const", const="true", default=None)
        else:
            p.add_argument(f"--{key}", default=None)
    return p


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in _OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def parse_config(argv, config_path=None):
    """Build a validated :class:`ExperimentConfig` from flags and an optional file."""
    ns = vars(_build_parser().parse_args(argv))
    path = ns.pop("config") or config_path
    merged = read_config_file(path) if path else {}
    for key in _OPTIONS:
        flag_val = ns.get(key.replace("-", "_"))
        if flag_val is not None:
            merged[key] = flag_val
    vals = {}
    for key, (conv, default) in _OPTIONS.items():
        if key in merged:
            try:
                vals[key] = conv(merged[key])
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid value for {key}: {merged[key]!r} ({exc})") from None
        else:
            vals[key] = default
    return _validate(vals)


def _validate(v):
    problem = v["problem"]
    if problem not in SOLVERS:
        raise UsageError("missing or unknown problem (expected 'heat' or 'wave')")
    if v["nh"] is None or v["nt"] is None:
        raise UsageError("--nh and --nt are required")
    if v["solver"] is None:
        raise UsageError("--solver is required")
    solvers = tuple(s.strip() for s in v["solver"].split(",") if s.strip())
    for s in solvers:
        if s not in SOLVERS[problem]:
            raise UsageError(f"solver {s!r} not available for {problem}; choose from {', '.join(SOLVERS[problem])}")
    if min(v["nh"]) < 1 or min(v["nt"]) < 1 or (v["ny"] is not None and v["ny"] < 1):
        raise UsageError("sizes must be positive")
    if problem == "wave" and v["ny"] is not None:
        raise UsageError("--ny is only supported for heat")
    if problem == "wave" and (min(v["nh"]) < 2 or min(v["nt"]) < 2):
        raise UsageError("wave bases need at least 2 functions per direction")
    T = v["T"] if v["T"] is not None else DEFAULT_T[problem]
    if not T > 0:
        raise UsageError(f"--T must be positive, got {T}")
    if not 0 < v["tol"] < 1:
        raise UsageError(f"--tol must lie in (0, 1), got {v['tol']}")
    if v["maxit"] < 1 or v["jobs"] < 1 or v["repeat"] < 1 or v["precond-iters"] < 1:
        raise UsageError("--maxit, --jobs, --repeat and --precond-iters must be >= 1")
    if v["restart"] is not None and v["restart"] < 1:
        raise UsageError("--restart must be >= 1")
    if not 0 < v["trunc-tol"] < 1:
        raise UsageError("--trunc-tol must lie in (0, 1)")
    oracle = v["oracle"]
    if oracle not in (None, "cn", "dense"):
        raise UsageError(f"--oracle must be 'cn' or 'dense', got {oracle!r}")
    if oracle == "cn" and problem != "heat":
        raise UsageError("the cn oracle exists only for heat")
    cfg = ExperimentConfig(
        problem=problem,
        N_h=v["nh"],
        N_t=v["nt"],
        solvers=solvers,
        N_y=v["ny"],
        T=T,
        rhs=v["rhs"] or DEFAULT_RHS[problem],
        tol=v["tol"],
        maxit=v["maxit"],
        oracle=oracle,
        trapezoidal_time=v["trapezoidal-time"],
        history=v["history"],
        out=v["out"],
        seed=v["seed"],
        allow_nonconverged=v["allow-nonconverged"],
        jobs=v["jobs"],
        repeat=v["repeat"],
        timing=not v["no-timing"],
        restart=v["restart"],
        precond_iters=v["precond-iters"],
        trunc_tol=v["trunc-tol"],
    )
    if "dense" in solvers or oracle == "dense":
        for nh, nt in itertools.product(cfg.N_h, cfg.N_t):
            n = cfg.spatial_size(nh) * nt
            if n > DENSE_LIMIT:
                raise UsageError(f"dense solve refused: N_h*N_t = {n} exceeds {DENSE_LIMIT}")
    return cfg


# ---------------------------------------------------------------- runs


def _timed(fn, repeat):
    """Run ``fn`` ``repeat`` times; return the last result and the median wall time."""
    times, out = [], None
    for _ in range(repeat):
        t0 = _time.perf_counter()
        out = fn()
        times.append(_time.perf_counter() - t0)
    return out, statistics.median(times)


def _sparse_direct(op, F):
    n_h, n_t = op.shape
    K = op.to_sparse().tocsc()
    x = spla.spsolve(K, F.ravel(order="F"))
    return np.asarray(x).reshape((n_h, n_t), order="F")


def _dense_relres(op, U, F):
    return float(np.linalg.norm(F - apply_kron(op, U)) / np.linalg.norm(F))


def _heat_rhs(cfg):
    dim = 2 if cfg.N_y else 1
    if cfg.rhs.endswith(".csv"):
        if dim != 1:
            raise UsageError("CSV right-hand sides are supported in 1D only")
        return load_rhs_csv(cfg.rhs, tol=0.01 * cfg.tol)
    try:
        return builtin_rhs(cfg.rhs, dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _wave_rhs(cfg):
    if cfg.rhs.endswith(".csv"):
        return load_rhs_csv(cfg.rhs, tol=0.01 * cfg.tol)
    if not cfg.rhs.startswith("wave-"):
        raise UsageError(f"right-hand side {cfg.rhs!r} is not a wave problem")
    try:
        return builtin_rhs(cfg.rhs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _heat_problem(cfg, nh, nt):
    grid = disc.TimeGrid(nt, cfg.T)
    if cfg.N_y:
        space = (disc.SpaceGrid1D(-1.0, 1.0, nh), disc.SpaceGrid1D(-1.0, 1.0, cfg.N_y))
        M, A = disc.fem2d_matrices(*space)
    else:
        space = disc.SpaceGrid1D(-1.0, 1.0, nh)
        M, A = disc.fem1d_matrices(space)
    D, C = disc.heat_time_matrices(grid)
    F = project_rhs_heat(_heat_rhs(cfg), grid, space, trapezoidal_time=cfg.trapezoidal_time).as_lowrank()
    return grid, M, A, D, C, F


def _column_error(U, Uref):
    num = np.linalg.norm(U - Uref, axis=0)
    den = np.linalg.norm(Uref, axis=0)
    den[den == 0] = 1.0
    return float(np.max(num / den))


def _rel_error(U, Uref):
    return float(np.linalg.norm(U - Uref) / max(np.linalg.norm(Uref), np.finfo(float).tiny))


def run_heat_experiment(cfg):
    """Run every configured heat solver on every ``(N_h, N_t)`` pair."""
    cells = list(itertools.product(cfg.N_h, cfg.N_t))
    rows = []
    for nh, nt in cells:
        grid, M, A, D, C, F = _heat_problem(cfg, nh, nt)
        op = heat_operator(M, A, D, C)
        Fd = F.to_dense()
        fnorm = np.linalg.norm(Fd)
        interval = estimate_spectral_interval(A, M, seed=cfg.seed) if {"rksm", "lrfgmres"} & set(cfg.solvers) else None
        ref = None
        if cfg.oracle == "cn":
            ref = crank_nicolson(M, A, Fd, grid).U
        elif cfg.oracle == "dense":
            ref = _sparse_direct(op, Fd)
        n_h = M.shape[0]

        def cell(method):
            if method == "rksm":
                solver = RKSM(M, A, D, C, interval=interval)
                (U, rep), t = _timed(lambda: solver.solve(F, tol=cfg.tol, maxit=cfg.maxit), cfg.repeat)
                relres = residual_norm_factored(op, U, F) / fnorm
                return U.to_dense(), ResultRow(method, n_h, nt, rep.iterations, rep.mu_mem, numerical_rank(U), t, relres, converged=rep.converged, history=rep.history)
            if method == "lrfgmres":
                gcfg = GmresConfig(tol=cfg.tol, maxit=cfg.maxit, trunc_tol=cfg.trunc_tol)

                def run():
                    pre = rksm_preconditioner(M, A, D, C, iters=cfg.precond_iters, interval=interval)
                    return lr_fgmres(op, pre, F, gcfg)

                (U, rep), t = _timed(run, cfg.repeat)
                relres = residual_norm_factored(op, U, F) / fnorm
                return U.to_dense(), ResultRow(method, n_h, nt, rep.iterations, rep.mu_mem, numerical_rank(U), t, relres, converged=rep.converged, history=rep.history)
            if method == "cn":
                traj, t = _timed(lambda: crank_nicolson(M, A, Fd, grid), cfg.repeat)
                U = traj.U
                relres = _dense_relres(op, U, Fd)
                return U, ResultRow(method, n_h, nt, nt, traj.mu_mem, numerical_rank(U), t, relres)
            U, t = _timed(lambda: _sparse_direct(op, Fd), cfg.repeat)
            return U, ResultRow(method, n_h, nt, 1, nt, numerical_rank(U), t, _dense_relres(op, U, Fd))

        for U, row in _map(cell, cfg.solvers, cfg.jobs):
            if ref is not None:
                row.err_oracle = _column_error(U, ref) if cfg.oracle == "cn" else _rel_error(U, ref)
            rows.append(row)
    return rows


def run_wave_experiment(cfg):
    """Run the wave solvers; rows carry the residual history for ``--history`` output."""
    rhs = _wave_rhs(cfg)
    exact = wave_exact_solution if cfg.rhs == "wave-ex2" else None
    rows = []
    for nh, nt in itertools.product(cfg.N_h, cfg.N_t):
        sb, tb = disc.wave_bases(nh, nt, T=cfg.T)
        M, A, Q = disc.wave_space_matrices(sb)
        Qt, Dt, Mt = disc.wave_time_matrices(tb)
        F = project_rhs_wave(rhs, tb, sb).to_dense()
        op = wave_operator(M, A, Q, Qt, Dt, Mt)
        ref = _sparse_direct(op, F) if cfg.oracle == "dense" else None

        def cell(method):
            if method == "gmres-lyap":
                gcfg = GmresConfig(tol=cfg.tol, maxit=cfg.maxit, restart=cfg.restart)

                def run():
                    p = build_two_term_precond(M, Q, Mt, Qt)
                    apply = lambda x: wave_operator_apply(M, A, Q, Qt, Dt, Mt, x)
                    return gmres(apply, two_term_preconditioner(p, nh, nt), F.ravel(order="F"), gcfg)

                (x, rep), t = _timed(run, cfg.repeat)
                U = x.reshape((nh, nt), order="F")
                row = ResultRow(method, nh, nt, rep.iterations, rep.mu_mem, numerical_rank(U), t, _dense_relres(op, U, F), converged=rep.converged, history=rep.history)
                return U, row
            U, t = _timed(lambda: _sparse_direct(op, F), cfg.repeat)
            return U, ResultRow(method, nh, nt, 1, nt, numerical_rank(U), t, _dense_relres(op, U, F))

        for U, row in _map(cell, cfg.solvers, cfg.jobs):
            if ref is not None:
                row.err_oracle = _rel_error(U, ref)
            elif exact is not None:
                row.err_oracle = disc.wave_l2_error(U, sb, tb, exact)
            rows.append(row)
    return rows


def _map(fn, items, jobs):
    if jobs == 1 or len(items) == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_experiment(cfg):
    if cfg.problem == "heat":
        return run_heat_experiment(cfg)
    return run_wave_experiment(cfg)


# ---------------------------------------------------------------- output


def format_rows(rows, timing=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.csv_fields(timing))
    return buf.getvalue()


def _history_path(base, row, many):
    if not many:
        return Path(base)
    p = Path(base)
    return p.with_name(f"{p.stem}_{row.method}_{row.N_h}x{row.N_t}{p.suffix or '.csv'}")


def write_histories(rows, base):
    with_hist = [r for r in rows if r.history]
    paths = []
    for row in with_hist:
        path = _history_path(base, row, len(with_hist) > 1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "relres"])
            for k, r in enumerate(row.history, start=1):
                w.writerow([k, f"{r:.6e}"])
        paths.append(path)
    return paths


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
        rows = run_experiment(cfg)
    except UsageError as exc:
        print(f"stk: error: {exc}", file=sys.stderr)
        return 1
    except (STKError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"stk: numeric failure: {exc}", file=sys.stderr)
        return 3
    text = format_rows(rows, cfg.timing)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    if cfg.history:
        write_histories(rows, cfg.history)
    failed = [r for r in rows if not r.converged]
    for r in failed:
        print(f"stk: {r.method} at N_h={r.N_h}, N_t={r.N_t} did not converge (relres {r.relres:.3e})", file=sys.stderr)
    if failed and not cfg.allow_nonconverged:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
