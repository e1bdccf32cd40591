"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see conftest.py); the lines are
collected in the terminal summary so a plain ``pytest`` run shows them.
"""
import math
import os
import subprocess
import sys
import time
from math import comb

import numpy as np
import pytest
from scipy.integrate import quad

from pxforms import cli
from pxforms import diagnostics as dg
from pxforms.cochains import Cochain, coboundary, codifferential, interpolate, mass
from pxforms.exterior_algebra import FormValue, MetricTensor, interior, wedge_covector
from pxforms.mesh import cube_mesh, disk_mesh, interval_mesh, square_mesh
from pxforms.model import EnergyModel, ExponentField, WeightField, functional
from pxforms.solver import SolverConfig, div_curl_solve, linear_hodge_solve, minimize

FAMILIES = {
    "interval": lambda: interval_mesh(12),
    "square": lambda: square_mesh(6, 5),
    "crisscross": lambda: square_mesh(4, pattern="crisscross"),
    "cube": lambda: cube_mesh(3),
    "disk": lambda: disk_mesh(4, warp=0.2),
}


def const_model(cx, k=0, p=2.0, mu=0.0, F=None, u0=None, boundary="dirichlet", a=1.0):
    pf = p if isinstance(p, ExponentField) else ExponentField.constant(cx, p)
    return EnergyModel(cx, k, pf, WeightField.constant(cx, a), mu, F, u0, boundary)


def harmonic_u0(cx):
    x, y = cx.vertices[:, 0], cx.vertices[:, 1]
    return Cochain(cx, 0, np.exp(np.pi * x) * np.cos(np.pi * y) / 10)


def test_algebra_battery(criterion):
    with criterion(1, "algebraic inequality battery, seed 42, 1e5 samples each") as info:
        t0 = time.perf_counter()
        rep = dg.algebra_suite(seed=42, samples=100_000)
        dt = time.perf_counter() - t0
        info["checks"] = len(rep.results)
        info["violations"] = sum(r.violations for r in rep.results)
        assert all(r.samples == 100_000 for r in rep.results)
        assert rep.passed, [r.name for r in rep.results if r.violations]
        assert dt < 30.0


def test_operator_identities(criterion):
    with criterion(2, "d d = 0, adjointness, boundary splitting") as info:
        rng = np.random.default_rng(2024)
        worst_adj = 0.0
        for name, make in FAMILIES.items():
            cx = make()
            for k in range(cx.dim - 1):
                prod = cx.coboundary_matrix(k + 1) @ cx.coboundary_matrix(k)
                prod.eliminate_zeros()
                assert prod.nnz == 0, name
            for k in range(cx.dim):
                Mk, Mk1 = mass(cx, k), mass(cx, k + 1)
                U = rng.standard_normal((cx.count(k), 100))
                E = rng.standard_normal((cx.count(k + 1), 100))
                lhs = np.einsum("ij,ij->j", cx.coboundary_matrix(k) @ U, Mk1.apply(E))
                rhs = np.einsum("ij,ij->j", U, Mk.apply(codifferential(Cochain(cx, k + 1, E), Mk1, Mk).values))
                rel = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))
                worst_adj = max(worst_adj, float(rel.max()))
        assert worst_adj <= 1e-10
        worst_split = 0.0
        for n in (1, 2, 3, 4):
            for _ in range(25):
                A = rng.standard_normal((n, n))
                g = MetricTensor.from_matrix(A @ A.T + n * np.eye(n))
                nu = rng.standard_normal(n)
                nu /= math.sqrt(nu @ g.g_inv @ nu)
                for k in range(n + 1):
                    xi = FormValue(n, k, rng.standard_normal((comb(n, k), 3)))
                    parts = FormValue.zero(n, k, 3)
                    if k < n:
                        parts = parts + interior(nu, wedge_covector(nu, xi), g)
                    if k > 0:
                        parts = parts + wedge_covector(nu, interior(nu, xi, g))
                    err = np.abs(parts.coeffs - xi.coeffs).max() / (1 + np.abs(xi.coeffs).max())
                    worst_split = max(worst_split, float(err))
        info["adjoint"] = f"{worst_adj:.1e}"
        info["split"] = f"{worst_split:.1e}"
        assert worst_split <= 1e-12


def _fd_pairs():
    meshes = [lambda: square_mesh(3), lambda: interval_mesh(6), lambda: cube_mesh(2)]
    combos = [(p, mu) for p in (1.3, 2.0, 3.5) for mu in (0.0, 0.5)]
    return [(*combos[i % 6], meshes[i % 3], i) for i in range(20)]


def test_gradient_energy_consistency(criterion):
    pairs = _fd_pairs()
    assert len(pairs) == 20
    with criterion(3, "finite differences vs energy_gradient, 20 pairs") as info:
        worst = 0.0
        for p, mu, make, i in pairs:
            rng = np.random.default_rng(300 + i)
            cx = make()
            k = i % min(cx.dim, 2)
            boundary = "neumann" if i % 4 == 3 else "dirichlet"
            F = Cochain(cx, k + 1, 0.5 * rng.standard_normal((cx.count(k + 1), 1)))
            u0 = Cochain(cx, k, 0.05 * rng.standard_normal((cx.count(k), 1)))
            pf = ExponentField.constant(cx, p)
            a = WeightField.from_samples(rng.uniform(0.5, 2.0, cx.n_cells))
            m = EnergyModel(cx, k, pf, a, mu, F, u0, boundary)
            fn = functional(m)
            v = 0.05 * rng.standard_normal((cx.count(k), 1))
            v[~m.dof_mask] = 0.0
            g = fn.gradient(v)
            h = 1e-6
            fd = np.zeros_like(g)
            for j in np.flatnonzero(m.dof_mask):
                e = np.zeros_like(v)
                e[j] = h
                fd[j] = (fn.value(v + e) - fn.value(v - e)) / (2 * h)
            assert np.linalg.norm(g) > 0, "pair without free DOFs"
            rel = np.linalg.norm(fd - g) / np.linalg.norm(g)
            worst = max(worst, float(rel))
        info["worst_rel"] = f"{worst:.1e}"
        assert worst <= 1e-6


def _linear_cases():
    two = square_mesh(1)
    sq = square_mesh(32)
    cube = cube_mesh(8)
    diag = lambda x: np.stack([x[:, 1], -x[:, 0]], 1)[:, :, None]
    yield "2-triangle k=0 neumann", const_model(two, F=interpolate(two, 1, diag), boundary="neumann")
    yield "2-triangle k=1", const_model(two, k=1, u0=interpolate(two, 1, lambda x: np.stack(
        [x[:, 1] ** 2, x[:, 0] * x[:, 1]], 1)[:, :, None]))
    yield "32x32 k=0", const_model(sq, u0=harmonic_u0(sq), F=interpolate(sq, 1, diag))
    u0 = interpolate(cube, 1, lambda x: np.stack([x[:, 1] * x[:, 2], np.sin(x[:, 0]), x[:, 0] ** 2], 1)[:, :, None])
    F = interpolate(cube, 2, lambda x: np.stack([x[:, 2], 0 * x[:, 0], x[:, 1]], 1)[:, :, None])
    yield "8^3 cube k=1", const_model(cube, k=1, u0=u0, F=F)


def test_linear_oracle_equivalence(criterion):
    with criterion(4, "p = 2 minimizer vs linear Hodge solve") as info:
        for name, m in _linear_cases():
            t0 = time.perf_counter()
            sol = minimize(m, SolverConfig(tol=1e-12))
            lin = linear_hodge_solve(m)
            dt = time.perf_counter() - t0
            err = mass(m.complex, m.degree + 1).norm(sol.omega.values - lin.omega.values)
            info[name] = f"{err:.1e}/{dt:.1f}s"
            assert sol.converged, name
            assert err <= 1e-8, name
            assert dt < 60.0, name


def test_gauge_invariance(criterion):
    with criterion(5, "omega unchanged by closed shifts of u0") as info:
        worst = 0.0
        cx = square_mesh(16)
        rng = np.random.default_rng(5)
        p = ExponentField.from_function(cx, lambda x: 2.2 + 0.8 * x[:, 0])
        a = WeightField.from_samples(rng.uniform(0.5, 2.0, cx.n_cells))
        F = Cochain(cx, 2, 0.3 * rng.standard_normal(cx.count(2)))
        u0 = Cochain(cx, 1, 0.2 * rng.standard_normal(cx.count(1)))
        for trial in range(3):
            phi = Cochain(cx, 0, rng.standard_normal(cx.count(0)))
            shifted = Cochain(cx, 1, u0.values + coboundary(phi).values)
            for mu in (0.0, 0.3):
                base = minimize(EnergyModel(cx, 1, p, a, mu, F, u0))
                moved = minimize(EnergyModel(cx, 1, p, a, mu, F, shifted))
                assert base.converged and moved.converged
                worst = max(worst, mass(cx, 2).norm(base.omega.values - moved.omega.values))
        info["worst_L2"] = f"{worst:.1e}"
        assert worst <= 1e-9


def test_div_curl_rotation(criterion):
    with criterion(6, "div-curl rotation field, O(h) on warped disks") as info:
        errs, hs = [], []
        for rings in (4, 8, 16, 32):
            cx = disk_mesh(rings, warp=0.3)
            f = interpolate(cx, 2, lambda x: np.ones((len(x), 1, 1)))
            u = div_curl_solve(f, None, "normal", degree=1, complex=cx)
            E = cx.simplices[1]
            a, b = cx.vertices[E[:, 0]], cx.vertices[E[:, 1]]
            exact = 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
            errs.append(mass(cx, 1).norm(u.values[:, 0] - exact))
            hs.append(1.0 / rings)
        slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
        info["slopes"] = ",".join(f"{s:.2f}" for s in slopes)
        assert np.all(slopes >= 0.9)


def test_regularity_oracles(criterion):
    with criterion(7, "Campanato alpha and Morrey slope on closed-form fields") as info:
        t0 = time.perf_counter()
        cx = interval_mesh(2 ** 14, -1.0, 1.0)
        vals = np.sqrt(np.maximum(cx.barycenters[:, 0], 0.0))[:, None]
        radii = [0.5 / 2 ** j for j in range(8)]
        fit, alpha, _ = dg.campanato_fit(vals, 2.0, [[0.0]], radii, cx)

        def quotient(r):
            f = lambda t: math.sqrt(max(t, 0.0))
            mean = quad(f, -r, r, points=[0.0])[0] / (2 * r)
            return quad(lambda t: (f(t) - mean) ** 2, -r, r, points=[0.0])[0] / (2 * r)

        assert np.allclose(fit.values, [quotient(r) for r in fit.radii], rtol=2e-2)
        sq = square_mesh(128, lower=(-1, -1), upper=(1, 1))
        r = np.linalg.norm(sq.barycenters, axis=1)
        mfit = dg.morrey_fit(r ** -0.25, ExponentField.constant(sq, 2.0), [[0.0, 0.0]],
                             [0.5, 0.25, 0.125, 0.0625], sq)
        exact = 4 * np.pi / 3 * np.asarray(mfit.radii) ** 1.5
        assert np.allclose(mfit.values, exact, rtol=0.05)
        dt = time.perf_counter() - t0
        info["alpha"] = f"{alpha:.3f}"
        info["morrey_slope"] = f"{mfit.slope:.3f}"
        assert alpha == pytest.approx(0.5, abs=0.05)
        assert mfit.slope == pytest.approx(1.5, abs=0.1)
        assert dt < 120.0


def test_meyers_probe(criterion):
    with criterion(8, "Meyers probe on a harmonic p = 2 run") as info:
        cx = square_mesh(32)
        sol = minimize(const_model(cx, u0=harmonic_u0(cx)))
        assert sol.converged
        res = dg.meyers_probe(sol.omega, ExponentField.constant(cx, 2.0),
                              pairs=dg.ball_pairs(cx, 0.25))
        info["sigma_star"] = res.sigma_star
        info["pairs"] = res.pairs
        assert res.c_probe == 10.0
        assert np.array_equal(res.sigmas, dg.DEFAULT_SIGMAS)
        assert res.sigma_star >= 0.25


def test_uhlenbeck_stand_in(criterion):
    with criterion(9, "Uhlenbeck c1 and beta at p = 1.5 and 3") as info:
        cx = square_mesh(32)
        pairs = dg.ball_pairs(cx, 0.25)
        for p in (1.5, 3.0):
            m = const_model(cx, p=p, u0=harmonic_u0(cx))
            sol = minimize(m)
            assert sol.converged
            res = dg.uhlenbeck_check(m, sol.omega, pairs)
            info[f"p={p}"] = f"c1={res.c1_meas:.2f} beta={res.beta_meas:.2f}"
            assert res.beta_meas > 0
            assert np.all(res.ratios < 5.0)


def _cli(*argv, threads):
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    env[cli.THREADS_ENV] = str(threads)
    return subprocess.run([sys.executable, "-m", "pxforms.cli", *map(str, argv)],
                          capture_output=True, env=env)


def test_determinism(criterion, tmp_path):
    with criterion(10, "byte-identical selftest and bundled reports across threads") as info:
        reports = {}
        for threads in (1, 4):
            res = _cli("selftest", "--seed", 7, threads=threads)
            assert res.returncode == 0, res.stderr
            reports[threads] = res.stdout
        assert reports[1] == reports[4]
        names = sorted(cli.bundled_configs())
        for name in names:
            outs = []
            for threads in (1, 4):
                d = tmp_path / f"{name}-{threads}"
                res = _cli("run", name, "--out", d, threads=threads)
                assert res.returncode == 0, res.stderr
                outs.append({p.name: p.read_bytes() for p in d.iterdir() if p.name != "timings.txt"})
            assert outs[0] == outs[1], name
        info["configs"] = len(names)
