import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from pxforms import cli
from pxforms.cochains import read_cochain
from pxforms.config import parse_config
from pxforms.mesh import generate, read_mesh

OUTPUTS = {"report.txt", "config.ini", "potential.cochain", "omega.cochain", "coulomb.cochain",
           "morrey.csv", "campanato.csv", "meyers.csv", "timings.txt"}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def bundled_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    out = {}
    for name in sorted(cli.bundled_configs()):
        d = root / name
        out[name] = (run("run", name, "--out", d), d)
    return out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestRun:
    def test_bundled_configs_exit_zero(self, bundled_runs):
        assert set(bundled_runs) == {"p2-square", "p3-edges", "variable-p-square"}
        for name, (code, d) in bundled_runs.items():
            assert code == cli.EXIT_OK, name
            assert {p.name for p in d.iterdir()} == OUTPUTS

    def test_report_contents(self, bundled_runs):
        _, d = bundled_runs["p2-square"]
        rep = cli.parse_report(d / "report.txt")
        assert rep["solution.converged"] == "true"
        assert rep["model.homogeneous"] == "true"
        assert rep["uhlenbeck.status"] == "ok"
        assert float(rep["meyers.sigma_star"]) > 0
        assert float(rep["solution.gauge_residual"]) == 0.0
        cfg_text = (d / "config.ini").read_text()
        assert parse_config(cfg_text).digest() == rep["config.sha256"]

    def test_variable_run_reports_algebra(self, bundled_runs):
        _, d = bundled_runs["variable-p-square"]
        rep = cli.parse_report(d / "report.txt")
        assert rep["algebra.passed"] == "true"
        assert rep["algebra.seed"] == "7"
        assert rep["uhlenbeck.status"] == "skipped"
        assert rep["model.homogeneous"] == "false"

    def test_cochain_outputs_reload(self, bundled_runs):
        _, d = bundled_runs["p3-edges"]
        cx = generate("square:16")
        omega = read_cochain(d / "omega.cochain", cx)
        assert omega.degree == 2
        pot = read_cochain(d / "potential.cochain", cx)
        assert np.allclose(cx.coboundary_matrix(1) @ pot.values, omega.values)

    def test_missing_mesh_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[mesh]\nfile = missing.txt\n[output]\ndir = out\n")
        out = tmp_path / "out"
        assert run("run", cfg, "--out", out) == cli.EXIT_INPUT
        assert not out.exists()
        assert not [p for p in tmp_path.iterdir() if p.name.startswith(".pxforms-")]
        assert "missing.txt" in capsys.readouterr().err

    def test_p_minus_rejected_at_parse(self, tmp_path, capsys):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[mesh]\nsource = square:4\n[model]\np = 1.5 + x1\np_minus = 1.0\n")
        assert run("run", cfg, "--out", tmp_path / "o") == cli.EXIT_INPUT
        err = capsys.readouterr().err
        assert "p- > 1" in err and "line 5" in err

    def test_refuses_foreign_directory(self, tmp_path):
        d = tmp_path / "o"
        d.mkdir()
        (d / "precious.txt").write_text("keep")
        assert run("run", "p3-edges", "--out", d) == cli.EXIT_INPUT
        assert (d / "precious.txt").read_text() == "keep"

    def test_nonconvergence_exit_2(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[mesh]\nsource = square:8\n[model]\np = 3\nu0 = x1^2\n"
                       "[solver]\nmax_iter = 1\n")
        assert run("run", cfg, "--out", tmp_path / "o") == cli.EXIT_SOLVER
        rep = cli.parse_report(tmp_path / "o" / "report.txt")
        assert rep["solution.converged"] == "false"

    def test_rerun_is_byte_identical_across_threads(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("run", "p3-edges", "--out", a, "--threads", 1) == 0
        assert run("run", "p3-edges", "--out", b, "--threads", 4) == 0
        for name in OUTPUTS - {"timings.txt"}:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestPlots:
    def test_tables_match_report(self, bundled_runs, tmp_path):
        _, d = bundled_runs["p2-square"]
        rep = cli.parse_report(d / "report.txt")
        for name in ("morrey", "campanato"):
            rows = read_csv(d / f"{name}.csv")
            assert rows[0] == ["radius", "value", "fitted"]
            levels = rep[f"fit.{name}.radii"].split(",")
            assert len(rows) - 1 == len(levels)
            values = rep[f"fit.{name}.values"].split(",")
            assert [r[1] for r in rows[1:]] == values
        meyers = read_csv(d / "meyers.csv")
        assert len(meyers) - 1 == len(rep["meyers.sigmas"].split(","))

    def test_regenerate(self, bundled_runs, tmp_path):
        _, d = bundled_runs["p2-square"]
        before = (d / "morrey.csv").read_bytes()
        (d / "morrey.csv").unlink()
        assert run("plots", d) == 0
        assert (d / "morrey.csv").read_bytes() == before

    def test_empty_diagnostics_header_only(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[mesh]\nsource = square:4\n[model]\np = 2\nu0 = x1\n"
                       "[diagnostics]\nmeyers = false\nmorrey = false\ncampanato = false\n"
                       "uhlenbeck = false\n")
        out = tmp_path / "o"
        assert run("run", cfg, "--out", out) == 0
        assert read_csv(out / "morrey.csv") == [["radius", "value", "fitted"]]
        assert read_csv(out / "campanato.csv") == [["radius", "value", "fitted"]]
        assert read_csv(out / "meyers.csv") == [["sigma", "worst_ratio"]]

    def test_missing_report(self, tmp_path):
        assert run("plots", tmp_path) == cli.EXIT_INPUT


class TestMeshGen:
    def test_writes_readable_mesh(self, tmp_path):
        path = tmp_path / "m.txt"
        assert run("mesh", "gen", "square:3x2", path) == 0
        cx = read_mesh(path)
        assert cx.n_cells == 12

    def test_bad_spec(self, tmp_path):
        assert run("mesh", "gen", "torus:3", tmp_path / "m.txt") == cli.EXIT_INPUT

    def test_file_mesh_run(self, tmp_path):
        path = tmp_path / "m.txt"
        run("mesh", "gen", "square:6", path)
        cfg = tmp_path / "c.ini"
        cfg.write_text("[mesh]\nfile = m.txt\n[model]\np = 2.5\nu0 = x1*x2\n"
                       "[diagnostics]\nradii = 0.25, 0.125, 0.0625\n")
        assert run("run", cfg, "--out", tmp_path / "o") == 0


class TestSelftest:
    def test_seed_7_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert run("selftest", "--seed", 7, "--out", a, "--threads", 1) == 0
        assert run("selftest", "--seed", 7, "--out", b, "--threads", 4) == 0
        assert a.read_bytes() == b.read_bytes()
        text = a.read_text()
        assert "selftest.passed = true" in text
        assert "identity.splitting = pass" in text

    def test_inject_fails_with_witness(self, capsys):
        assert run("selftest", "--inject") == cli.EXIT_DIAGNOSTIC
        out = capsys.readouterr().out
        assert "algebra.alg1.witness.p" in out
        assert "selftest.passed = false" in out

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        assert run("selftest", "--seed", 1) == cli.EXIT_INPUT


def test_console_entry_point(tmp_path):
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    res = subprocess.run([sys.executable, "-m", "pxforms.cli", "--version"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stdout.startswith("pxforms ")
