import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from stk import cli
from stk.cli import CSV_HEADER, main, parse_config, run_experiment
from stk.errors import UsageError


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestParseConfig:
    def test_heat_example(self):
        cfg = parse_config("heat --nh 199 --nt 100 --T 10 --solver rksm".split())
        assert cfg.problem == "heat" and cfg.N_h == (199,) and cfg.N_t == (100,)
        assert cfg.T == 10.0 and cfg.solvers == ("rksm",) and cfg.tol == 1e-8

    def test_wave_example(self):
        cfg = parse_config("wave --nh 256 --nt 256 --solver gmres-lyap".split())
        assert cfg.problem == "wave" and cfg.rhs == "wave-ex2-literal" and cfg.T == 1.0

    def test_lists(self):
        cfg = parse_config("heat --nh 10,20 --nt 5,6,7 --solver rksm,cn".split())
        assert cfg.N_h == (10, 20) and cfg.N_t == (5, 6, 7) and cfg.solvers == ("rksm", "cn")

    @pytest.mark.parametrize(
        "argv",
        [
            "heat --solver dense --nh 1000 --nt 1000",
            "heat --nh 10 --nt 10",
            "--nh 10 --nt 10 --solver rksm",
            "heat --nh 10 --solver rksm",
            "heat --nh 10 --nt 10 --solver gmres-lyap",
            "wave --nh 10 --nt 10 --solver rksm",
            "heat --nh 10 --nt 10 --solver rksm --tol 2",
            "heat --nh 10 --nt 10 --solver rksm --maxit 0",
            "heat --nh 0 --nt 10 --solver rksm",
            "heat --nh 10 --nt 10 --solver rksm --T -1",
            "heat --nh ten --nt 10 --solver rksm",
            "wave --nh 10 --nt 10 --solver gmres-lyap --oracle cn",
            "heat --nh 10 --nt 10 --solver rksm --oracle exact",
            "heat --nh 10 --nt 10 --solver rksm --bogus 1",
            "heat --nh 10 --nt 10 --solver rksm --oracle dense --ny 500 --nt 500",
        ],
    )
    def test_usage_errors(self, argv):
        with pytest.raises(UsageError):
            parse_config(argv.split())

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# sweep\nproblem = heat\nnh = 30\nnt = 10, 20\nsolver = rksm\ntol = 1e-6\ntrapezoidal_time = yes\n")
        cfg = parse_config(["--config", str(path)])
        assert cfg.N_t == (10, 20) and cfg.tol == 1e-6 and cfg.trapezoidal_time
        cfg = parse_config(["--config", str(path), "--tol", "1e-9", "--nt", "7"])
        assert cfg.tol == 1e-9 and cfg.N_t == (7,)

    def test_config_file_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("problem = heat\ncolour = blue\n")
        with pytest.raises(UsageError, match="colour"):
            parse_config(["--config", str(path)])

    def test_config_file_missing(self, tmp_path):
        with pytest.raises(UsageError):
            parse_config(["--config", str(tmp_path / "none.cfg")])


class TestMain:
    def test_success_and_header(self, capsys):
        code, out, _ = _run("heat --nh 40 --nt 30 --solver rksm,cn,dense --oracle dense".split(), capsys)
        assert code == 0
        assert out.splitlines()[0] == ",".join(CSV_HEADER)
        rows = _rows(out)
        assert [r["method"] for r in rows] == ["rksm", "cn", "dense"]
        for r in rows:
            assert float(r["err_oracle"]) <= 1e-6
            assert float(r["relres"]) <= 1e-8

    def test_usage_exit(self, capsys):
        code, _, err = _run("heat --solver dense --nh 1000 --nt 1000".split(), capsys)
        assert code == 1 and "refused" in err

    def test_nonconvergence_exit(self, capsys):
        argv = "wave --nh 32 --nt 32 --solver gmres-lyap --maxit 3".split()
        code, out, _ = _run(argv, capsys)
        assert code == 2 and len(_rows(out)) == 1
        code, _, _ = _run(argv + ["--allow-nonconverged"], capsys)
        assert code == 0

    def test_numeric_exit(self, capsys, monkeypatch):
        def boom(cfg):
            raise FloatingPointError("overflow")

        monkeypatch.setattr(cli, "run_experiment", boom)
        code, _, err = _run("heat --nh 5 --nt 5 --solver cn".split(), capsys)
        assert code == 3 and "overflow" in err

    def test_out_and_history(self, tmp_path, capsys):
        out = tmp_path / "rows.csv"
        hist = tmp_path / "hist.csv"
        code, stdout, _ = _run(["wave", "--nh", "24", "--nt", "24", "--solver", "gmres-lyap", "--out", str(out), "--history", str(hist)], capsys)
        assert code == 0 and stdout == ""
        rows = _rows(out.read_text())
        lines = hist.read_text().splitlines()
        assert lines[0] == "iter,relres" and len(lines) - 1 == int(rows[0]["iters"])
        vals = [float(l.split(",")[1]) for l in lines[1:]]
        assert np.all(np.diff(vals) <= 0)

    def test_history_per_run(self, tmp_path, capsys):
        hist = tmp_path / "h.csv"
        code, _, _ = _run(["heat", "--nh", "20", "--nt", "8,9", "--solver", "rksm", "--history", str(hist)], capsys)
        assert code == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["h_rksm_20x8.csv", "h_rksm_20x9.csv"]

    def test_byte_stable(self, tmp_path, capsys):
        argv = "heat --nh 30 --nt 20 --solver rksm,lrfgmres,cn --no-timing --oracle cn --trapezoidal-time".split()
        first = _run(argv, capsys)[1]
        second = _run(argv + ["--jobs", "3"], capsys)[1]
        assert first == second
        assert all(r["time_s"] == "" for r in _rows(first))

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "stk.cli", "heat", "--nh", "10", "--nt", "5", "--solver", "cn", "--no-timing"],
            capture_output=True,
            text=True,
            check=False,
        )
        assert proc.returncode == 0 and proc.stdout.startswith("method,")


class TestRows:
    def test_heat_residuals_recomputed(self):
        from stk import discretize as disc
        from stk.rhs_sep import builtin_rhs, project_rhs_heat
        from stk.rksm import rksm_solve

        cfg = parse_config("heat --nh 60 --nt 25 --solver rksm".split())
        (row,) = run_experiment(cfg)
        grid = disc.TimeGrid(25, 10.0)
        space = disc.SpaceGrid1D(-1.0, 1.0, 60)
        M, A = disc.fem1d_matrices(space)
        D, C = disc.heat_time_matrices(grid)
        F = project_rhs_heat(builtin_rhs("heat-ex1"), grid, space).as_lowrank()
        _, rep = rksm_solve(M, A, D, C, F)
        assert abs(row.relres - rep.relres) <= 1e-10 * max(rep.relres, 1e-300) + 1e-16

    def test_wave_residuals_recomputed(self):
        cfg = parse_config("wave --nh 20 --nt 20 --solver gmres-lyap,dense --oracle dense".split())
        rows = run_experiment(cfg)
        assert rows[0].converged
        for r in rows:
            assert r.err_oracle <= 1e-6

    def test_csv_rhs(self, tmp_path):
        t = np.linspace(0, 10, 21)
        x = np.linspace(-1, 1, 21)
        path = tmp_path / "f.csv"
        with open(path, "w") as fh:
            fh.write("t,x,f\n")
            for ti in t:
                for xi in x:
                    fh.write(f"{ti},{xi},{np.sin(ti) * (1 - xi**2)}\n")
        cfg = parse_config(["heat", "--nh", "30", "--nt", "12", "--solver", "rksm,dense", "--rhs", str(path), "--oracle", "dense"])
        rows = run_experiment(cfg)
        assert all(r.err_oracle <= 1e-6 for r in rows)

    def test_two_dimensional(self):
        cfg = parse_config("heat --nh 12 --ny 10 --nt 15 --solver rksm,lrfgmres,dense --oracle dense".split())
        rows = run_experiment(cfg)
        assert all(r.N_h == 120 for r in rows)
        assert all(r.err_oracle <= 1e-6 for r in rows)

    def test_manufactured_error_column(self):
        cfg = parse_config("wave --nh 16 --nt 16 --solver gmres-lyap --rhs wave-ex2 --tol 1e-10".split())
        (row,) = run_experiment(cfg)
        assert 0 < row.err_oracle < 0.05
