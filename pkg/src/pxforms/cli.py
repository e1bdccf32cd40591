"""Command line front end: ``run``, ``selftest``, ``plots`` and ``mesh gen``.

Exit codes: 0 success, 1 input error, 2 solver did not converge,
3 diagnostic violation.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import shutil
import sys
import tempfile
import time
import warnings
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .cochains import Cochain, codifferential, interpolate, mass, read_cochain, write_cochain
from .config import ConfigError, ExperimentConfig, Expression, FormSpec, load_config
from .diagnostics import (DEFAULT_SIGMAS, DiagnosticError, RegularityReport, algebra_suite,
                          ball_pairs, campanato_fit, meyers_probe, morrey_fit, uhlenbeck_check)
from .exterior_algebra import (FormValue, MetricTensor, index_tuples, interior,
                               wedge_covector)
from .mesh import MeshError, ball, generate, interior_centers, read_mesh, write_mesh
from .model import (EnergyModel, ExponentField, ModelError, WeightField, energy_gradient,
                    exponent_moduli, total_energy)
from .solver import SolverError, minimize

THREADS_ENV = "PXFORMS_THREADS"
EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_DIAGNOSTIC = 0, 1, 2, 3


class InputError(Exception):
    pass


def _threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None


def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:       # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(fmt(t) for t in np.ravel(np.asarray(v, dtype=object)))
    if v is None:
        return "none"
    return str(v)


# -- building the problem --------------------------------------------------------------

def _load_cell_values(path: Path, ncells: int) -> np.ndarray:
    try:
        vals = np.loadtxt(path, comments="#", ndmin=1)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if vals.shape != (ncells,):
        raise InputError(f"{path}: expected {ncells} per-cell values, got {vals.size}")
    return vals


def build_model(cfg: ExperimentConfig) -> EnergyModel:
    if cfg.mesh_is_file:
        cx = read_mesh(cfg.resolve(cfg.mesh[5:].strip()))
    else:
        cx = generate(cfg.mesh)
    n, k, N = cx.dim, cfg.degree, cfg.vec_dim
    if not 0 <= k < n:
        raise InputError(f"degree must lie in 0..{n - 1} on a {n}-dimensional mesh")

    def scalar(spec):
        if spec.startswith("file:"):
            return _load_cell_values(cfg.resolve(spec[5:].strip()), cx.n_cells)
        return Expression(spec, n)(cx.barycenters)

    def form(spec, deg):
        if spec is None:
            return None
        if spec.startswith("file:"):
            u = read_cochain(cfg.resolve(spec[5:].strip()), cx)
            if u.degree != deg or u.vec_dim != N:
                raise InputError(f"{spec}: expected a {deg}-cochain with {N} components")
            return u
        return interpolate(cx, deg, FormSpec.parse(spec, n, deg), N)

    p = ExponentField.from_samples(scalar(cfg.p), cfg.p_minus, cfg.p_plus)
    a = WeightField.from_samples(scalar(cfg.a))
    return EnergyModel(cx, k, p, a, cfg.mu, form(cfg.F, k + 1), form(cfg.u0, k),
                       cfg.boundary, N, cfg.mu_plus)


def run_diagnostics(cfg: ExperimentConfig, model: EnergyModel, sol) -> tuple:
    cx = model.complex
    radii = sorted(cfg.radii, reverse=True)
    R = radii[0]
    centers = cfg.center_points()
    if centers is None:
        centers = interior_centers(cx, R, cfg.spacing)
    rep = RegularityReport(K0=sol.K0)
    notes = {}
    try:
        rep.moduli = exponent_moduli(model.p, cx, radii)
    except ValueError as exc:
        notes["moduli"] = str(exc)
    if len(centers) == 0:
        notes["centers"] = "no interior centers at distance >= R from the boundary"
        return rep, notes
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if cfg.morrey:
            try:
                rep.morrey = morrey_fit(sol.omega, model.p, centers, radii)
            except DiagnosticError as exc:
                notes["morrey"] = str(exc)
        if cfg.campanato:
            try:
                rep.campanato, rep.alpha, rep.alpha_flags = campanato_fit(
                    sol.omega, model.p.p_minus, centers, radii)
            except DiagnosticError as exc:
                notes["campanato"] = str(exc)
        pairs = ball_pairs(cx, R, cfg.spacing) if cfg.center_points() is None else \
            _pairs_at(cx, centers, R)
        if cfg.meyers:
            try:
                rep.meyers = meyers_probe(sol.omega, model.p, model.F, pairs,
                                          sigmas=cfg.sigmas or DEFAULT_SIGMAS,
                                          c_probe=cfg.c_probe)
            except DiagnosticError as exc:
                notes["meyers"] = str(exc)
        want = cfg.uhlenbeck == "true" or (cfg.uhlenbeck == "auto" and model.is_homogeneous)
        if want:
            try:
                rep.uhlenbeck = uhlenbeck_check(model, sol.omega, pairs, radii)
            except DiagnosticError as exc:
                notes["uhlenbeck"] = str(exc)
    return rep, notes


def _pairs_at(cx, centers, R):
    out = []
    for x0 in centers:
        inner, outer = ball(cx, x0, 0.5 * R), ball(cx, x0, R)
        if not inner.empty:
            out.append((inner, outer))
    return out


# -- report ----------------------------------------------------------------------------

def _fit_lines(prefix, fit) -> list[str]:
    if fit is None:
        return [f"{prefix}.status = skipped"]
    return [f"{prefix}.status = {'degenerate' if fit.degenerate else 'ok'}",
            f"{prefix}.center = {fmt(fit.center)}",
            f"{prefix}.radii = {fmt(fit.radii)}",
            f"{prefix}.values = {fmt(fit.values)}",
            f"{prefix}.slope = {fmt(fit.slope)}",
            f"{prefix}.log_constant = {fmt(fit.log_constant)}",
            f"{prefix}.r2 = {fmt(fit.r2)}",
            f"{prefix}.dropped = {fit.dropped}",
            f"{prefix}.centers = {len(fit.per_center)}"]


def report_lines(cfg, model, sol, rep, notes, alg) -> list[str]:
    cx = model.complex
    out = [f"tool.version = {__version__}",
           f"config.sha256 = {cfg.digest()}",
           f"mesh.dim = {cx.dim}",
           f"mesh.cells = {cx.n_cells}",
           f"mesh.vertices = {cx.count(0)}",
           f"model.degree = {model.degree}",
           f"model.vec_dim = {model.vec_dim}",
           f"model.p_minus = {fmt(model.p.p_minus)}",
           f"model.p_plus = {fmt(model.p.p_plus)}",
           f"model.mu = {fmt(model.mu)}",
           f"model.mu_eff = {fmt(model.mu_eff)}",
           f"model.boundary = {model.boundary}",
           f"model.homogeneous = {fmt(model.is_homogeneous)}",
           f"solver.seed = {cfg.solver.seed}",
           f"solution.converged = {fmt(sol.converged)}",
           f"solution.iterations = {sol.iterations}",
           f"solution.energy = {fmt(sol.energy)}",
           f"solution.grad_norm = {fmt(sol.grad_norm)}",
           f"solution.grad_norm0 = {fmt(sol.grad_norm0)}",
           f"solution.K0 = {fmt(sol.K0)}",
           f"solution.gauge_residual = {fmt(sol.gauge_residual)}",
           f"solution.gauge_fix = {sol.gauge_fix}",
           f"solution.mu_substituted = {fmt(sol.mu_substituted)}",
           f"solution.message = {sol.message or 'none'}"]
    if rep.moduli is not None:
        m = rep.moduli
        out += [f"moduli.radii = {fmt(m.radii)}",
                f"moduli.theta = {fmt(m.theta)}",
                f"moduli.c_log = {fmt(m.c_log)}",
                f"moduli.holder_constant = {fmt(m.holder_constant)}",
                f"moduli.holder_exponent = {fmt(m.holder_exponent)}",
                f"moduli.constant = {fmt(m.constant)}"]
    out += _fit_lines("fit.morrey", rep.morrey)
    if rep.morrey is not None and not rep.morrey.degenerate:
        out.append(f"fit.morrey.tau = {fmt(cx.dim - rep.morrey.slope)}")
    out += _fit_lines("fit.campanato", rep.campanato)
    if rep.campanato is not None:
        out += [f"fit.campanato.alpha = {fmt(rep.alpha)}",
                f"fit.campanato.beta = {fmt(rep.alpha_flags.get('beta'))}",
                f"fit.campanato.exact = {fmt(rep.alpha_flags.get('exact'))}",
                f"fit.campanato.clamped = {fmt(rep.alpha_flags.get('clamped'))}"]
    if rep.meyers is None:
        out.append("meyers.status = skipped")
    else:
        mr = rep.meyers
        out += ["meyers.status = ok",
                f"meyers.sigma_star = {fmt(mr.sigma_star)}",
                f"meyers.c_probe = {fmt(mr.c_probe)}",
                f"meyers.pairs = {mr.pairs}",
                f"meyers.sigmas = {fmt(mr.sigmas)}",
                f"meyers.worst_ratio = {fmt(mr.worst_ratio)}"]
    if rep.uhlenbeck is None:
        out.append("uhlenbeck.status = skipped")
    else:
        u = rep.uhlenbeck
        out += ["uhlenbeck.status = ok",
                f"uhlenbeck.c1_meas = {fmt(u.c1_meas)}",
                f"uhlenbeck.beta_meas = {fmt(u.beta_meas)}",
                f"uhlenbeck.exact = {fmt(u.exact)}",
                f"uhlenbeck.beta_positive = {fmt(u.beta_meas > 0)}"]
    for key in sorted(notes):
        out.append(f"note.{key} = {notes[key]}")
    if alg is not None:
        out += alg.lines()
    return out


def parse_report(path: Path) -> dict:
    out = {}
    for ln in Path(path).read_text().splitlines():
        if " = " in ln:
            k, v = ln.split(" = ", 1)
            out[k] = v
    return out


def _floats(text: str) -> np.ndarray:
    if not text or text == "none":
        return np.array([])
    return np.array([float(t) for t in text.split(",")])


def emit_plot_data(report_dir) -> list[Path]:
    """Write one CSV per fit (radius, value, fitted) plus the Meyers ratio table."""
    report_dir = Path(report_dir)
    path = report_dir / "report.txt"
    if not path.is_file():
        raise FileNotFoundError(f"no report at {path}")
    rep = parse_report(path)
    written = []
    for name in ("morrey", "campanato"):
        rows = []
        if rep.get(f"fit.{name}.status") == "ok":
            r = _floats(rep[f"fit.{name}.radii"])
            v = _floats(rep[f"fit.{name}.values"])
            slope = float(rep[f"fit.{name}.slope"])
            c = float(rep[f"fit.{name}.log_constant"])
            rows = [(ri, vi, math.exp(c) * ri ** slope) for ri, vi in zip(r, v)]
        out = report_dir / f"{name}.csv"
        _write_csv(out, ("radius", "value", "fitted"), rows)
        written.append(out)
    rows = []
    if rep.get("meyers.status") == "ok":
        rows = list(zip(_floats(rep["meyers.sigmas"]), _floats(rep["meyers.worst_ratio"])))
    out = report_dir / "meyers.csv"
    _write_csv(out, ("sigma", "worst_ratio"), rows)
    written.append(out)
    return written


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


# -- verbs -----------------------------------------------------------------------------

def bundled_configs() -> dict:
    root = resources.files("pxforms") / "configs"
    return {p.name[:-4]: p for p in root.iterdir() if p.name.endswith(".ini")}


def _config_path(arg: str):
    if Path(arg).exists():
        return Path(arg)
    bundled = bundled_configs()
    name = arg[:-4] if arg.endswith(".ini") else arg
    if name in bundled:
        return bundled[name]
    return Path(arg)


def cmd_run(args) -> int:
    t_all = time.perf_counter()
    timings = {}
    try:
        cfg = load_config(_config_path(args.config))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(args.out) if args.out else Path(cfg.output)
    if out_dir.exists() and any(out_dir.iterdir()) and not (out_dir / "report.txt").exists():
        print(f"error: refusing to overwrite non-report directory {out_dir}", file=sys.stderr)
        return EXIT_INPUT
    threads = _threads(args.threads)
    with _thread_limit(threads):
        t = time.perf_counter()
        try:
            model = build_model(cfg)
        except (InputError, ModelError, MeshError, ConfigError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        timings["build"] = time.perf_counter() - t
        t = time.perf_counter()
        try:
            sol = minimize(model, cfg.solver)
        except SolverError as exc:
            print(f"error: solver aborted: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        timings["solve"] = time.perf_counter() - t
        t = time.perf_counter()
        rep, notes = run_diagnostics(cfg, model, sol)
        timings["diagnostics"] = time.perf_counter() - t
        alg = None
        if cfg.algebra_seed is not None:
            t = time.perf_counter()
            alg = algebra_suite(cfg.algebra_seed, cfg.algebra_samples, workers=threads)
            timings["algebra"] = time.perf_counter() - t
    lines = report_lines(cfg, model, sol, rep, notes, alg)
    _write_outputs(out_dir, cfg, sol, lines, timings, t_all)
    if not sol.converged:
        print(f"solver did not converge: {sol.message}", file=sys.stderr)
        return EXIT_SOLVER
    if (alg is not None and not alg.passed) or \
            (rep.uhlenbeck is not None and not rep.uhlenbeck.beta_meas > 0):
        print("diagnostic violation; see report", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def _write_outputs(out_dir: Path, cfg, sol, lines, timings, t_all):
    """Write everything into a sibling temp directory, then move it into place."""
    out_dir = out_dir.resolve()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".pxforms-", dir=out_dir.parent))
    try:
        (tmp / "report.txt").write_text("\n".join(lines) + "\n")
        (tmp / "config.ini").write_text(cfg.to_text())
        write_cochain(sol.potential, tmp / "potential.cochain")
        write_cochain(sol.omega, tmp / "omega.cochain")
        if sol.coulomb is not None:
            write_cochain(sol.coulomb, tmp / "coulomb.cochain")
        emit_plot_data(tmp)
        timings["total"] = time.perf_counter() - t_all
        (tmp / "timings.txt").write_text(
            "".join(f"{k} = {v:.6f}\n" for k, v in timings.items()))
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def selftest_lines(seed: int, inject: bool = False, workers: int = 1) -> tuple[list[str], bool]:
    """Algebra battery plus operator-identity checks; deterministic in ``seed``."""
    lines = [f"selftest.seed = {seed}", f"tool.version = {__version__}"]
    alg = algebra_suite(seed, inject=inject, workers=workers)
    lines += alg.lines()
    ok = alg.passed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1000]))
    for spec in ("interval:8", "square:4", "square:3x3:crisscross", "cube:2", "disk:3"):
        cx = generate(spec)
        dd = 0.0
        adj = 0.0
        for k in range(cx.dim - 1):
            prod = cx.coboundary_matrix(k + 1) @ cx.coboundary_matrix(k)
            dd = max(dd, float(abs(prod).max()) if prod.nnz else 0.0)
        for k in range(cx.dim):
            Mk, Mk1 = mass(cx, k), mass(cx, k + 1)
            for _ in range(5):
                u = Cochain(cx, k, rng.standard_normal((cx.count(k), 1)))
                eta = Cochain(cx, k + 1, rng.standard_normal((cx.count(k + 1), 1)))
                lhs = Mk1.pair(cx.coboundary_matrix(k) @ u.values, eta.values)
                rhs = Mk.pair(u.values, codifferential(eta, Mk1, Mk).values)
                adj = max(adj, abs(lhs - rhs) / max(1.0, abs(lhs)))
        lines.append(f"identity.{spec}.dd = {fmt(dd)}")
        lines.append(f"identity.{spec}.adjoint = {'pass' if adj <= 1e-10 else fmt(adj)}")
        ok &= dd == 0.0 and adj <= 1e-10
    split = 0.0
    for n in (2, 3, 4):
        A = rng.standard_normal((n, n))
        g = MetricTensor.from_matrix(A @ A.T + n * np.eye(n))
        for k in range(1, n):
            nu = rng.standard_normal(n)
            nu /= math.sqrt(nu @ g.g_inv @ nu)
            xi = FormValue(n, k, rng.standard_normal((len(index_tuples(n, k)), 2)))
            rec = interior(nu, wedge_covector(nu, xi), g) + wedge_covector(nu, interior(nu, xi, g))
            split = max(split, float(np.abs(rec.coeffs - xi.coeffs).max()))
    lines.append(f"identity.splitting = {'pass' if split <= 1e-12 else fmt(split)}")
    ok &= split <= 1e-12
    fd = 0.0
    cx = generate("square:4")
    for p, mu in ((1.3, 0.5), (3.5, 0.0)):
        model = EnergyModel(cx, 0, ExponentField.constant(cx, p), WeightField.constant(cx), mu,
                            u0=Cochain(cx, 0, rng.standard_normal((cx.count(0), 1))))
        free = np.flatnonzero(model.dof_mask)
        v = np.zeros((cx.count(0), 1))
        v[free, 0] = rng.standard_normal(len(free))
        g = energy_gradient(model, Cochain(cx, 0, v)).values
        dirn = np.zeros_like(v)
        dirn[free, 0] = rng.standard_normal(len(free))
        h = 1e-5
        num = (total_energy(model, Cochain(cx, 0, v + h * dirn))
               - total_energy(model, Cochain(cx, 0, v - h * dirn))) / (2 * h)
        ana = float(np.sum(g * dirn))
        fd = max(fd, abs(num - ana) / max(abs(ana), 1e-300))
    lines.append(f"identity.gradient = {'pass' if fd <= 1e-6 else fmt(fd)}")
    ok &= fd <= 1e-6
    lines.append(f"selftest.passed = {fmt(ok)}")
    return lines, ok


def cmd_selftest(args) -> int:
    try:
        threads = _threads(args.threads)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    with _thread_limit(threads):
        lines, ok = selftest_lines(args.seed, args.inject, threads)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_DIAGNOSTIC


def cmd_plots(args) -> int:
    try:
        for p in emit_plot_data(args.report_dir):
            print(p)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_mesh_gen(args) -> int:
    try:
        cx = generate(args.spec)
    except (MeshError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_mesh(cx, args.out)
    print(f"wrote {args.out}: {cx.count(0)} vertices, {cx.n_cells} cells")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pxforms", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pxforms {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="solve and diagnose one configured experiment")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides [output] dir)")
    r.add_argument("--threads", type=int, help=f"thread count (default ${THREADS_ENV} or 1)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("selftest", help="algebra battery and operator identities")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--inject", action="store_true", help="use a wrong alg1 constant")
    s.add_argument("--out", help="also write the report to this file")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_selftest)

    pl = sub.add_parser("plots", help="write CSV tables from a report directory")
    pl.add_argument("report_dir")
    pl.set_defaults(func=cmd_plots)

    m = sub.add_parser("mesh", help="mesh utilities")
    msub = m.add_subparsers(dest="mesh_verb", required=True)
    g = msub.add_parser("gen", help="generate a mesh file from a spec")
    g.add_argument("spec")
    g.add_argument("out")
    g.set_defaults(func=cmd_mesh_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
