"""Energy minimization, the linear (p = 2) Hodge solve and div-curl gauge fixing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cochains import Cochain, assemble_mass, codifferential, coboundary, mass, modular
from .model import NEUMANN, EnergyModel, ModelError, functional

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "p2-laplace")


class SolverError(RuntimeError):
    pass


class IncompatibleDataError(ValueError):
    """Div-curl data violating closedness or a compatibility integral."""


class UnsupportedTopologyError(ValueError):
    """A closed form that is not exact (non-contractible mesh)."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 5000
    backtrack: float = 0.5
    armijo: float = 1e-4
    preconditioner: str = "p2-laplace"
    seed: int = 0
    linear_tol: float = 1e-12
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.tol > 0 or not self.linear_tol > 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 1):
            raise ValueError("line-search factors must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")


@dataclass
class Solution:
    potential: Cochain
    omega: Cochain
    energy: float
    grad_norm: float
    grad_norm0: float
    iterations: int
    converged: bool
    K0: float
    coulomb: Cochain | None = None
    gauge_residual: float = math.nan
    mu_substituted: bool = False
    gauge_fix: str = "none"
    message: str = ""
    energy_history: list = field(default_factory=list, repr=False)


# -- helpers ----------------------------------------------------------------------

def _stiffness(model: EnergyModel) -> sp.csr_matrix:
    """``d^T M^{(a)}_{k+1} d`` restricted to free DOFs."""
    key = "stiffness"
    if key not in model.cache:
        cx, k = model.complex, model.degree
        d = cx.coboundary_matrix(k)
        Ma = assemble_mass(cx, k + 1, model.a.values).matrix
        free = np.flatnonzero(model.dof_mask)
        K = (d.T @ Ma @ d).tocsr()[free][:, free]
        model.cache[key] = (K, Ma, d, free)
    return model.cache[key]


def _preconditioner(model: EnergyModel, cfg: SolverConfig):
    if cfg.preconditioner == "none" or not model.dof_mask.any():
        return None
    K, _, _, free = _stiffness(model)
    Mk = mass(model.complex, model.degree).matrix.tocsr()[free][:, free]
    shift = 1e-6 * K.diagonal().sum() / Mk.diagonal().sum()
    lu = spla.splu((K + shift * Mk).tocsc())
    return lu.solve


def _project_constants(model: EnergyModel, values: np.ndarray) -> np.ndarray:
    """Remove the mass-weighted mean of a Neumann 0-cochain."""
    M0 = mass(model.complex, 0).matrix
    ones = np.ones(model.complex.count(0))
    mean = (ones @ (M0 @ values)) / (ones @ (M0 @ ones))
    return values - mean[None, :] if values.ndim == 2 else values - mean


def _finish(model, v_full, energy, gnorm, g0, it, converged, msg, history, fix,
            gauge=True, cfg=None) -> Solution:
    cx, k = model.complex, model.degree
    if model.boundary == NEUMANN and k == 0:
        v_full = _project_constants(model, v_full)
        fix = "mean-zero"
    pot = Cochain(cx, k, model.u0.values + v_full)
    omega = coboundary(pot)
    K0 = modular(omega, model.p) + 1.0
    sol = Solution(pot, omega, energy, gnorm, g0, it, converged, K0,
                   mu_substituted=model.mu_substituted, gauge_fix=fix,
                   message=msg, energy_history=history)
    if gauge:
        try:
            sol.coulomb = coulomb_potential(omega, tol=(cfg.linear_tol if cfg else 1e-12))
            sol.gauge_residual = gauge_residual(sol.coulomb)
        except UnsupportedTopologyError as exc:
            sol.message = (sol.message + "; " if sol.message else "") + str(exc)
    return sol


def gauge_residual(u: Cochain) -> float:
    """``‖d* u‖`` in the L2 norm (0 for 0-cochains)."""
    if u.degree == 0:
        return 0.0
    w = codifferential(u)
    return mass(u.complex, u.degree - 1).norm(w.values)


# -- nonlinear minimization ----------------------------------------------------------

def minimize(model: EnergyModel, cfg: SolverConfig | None = None, *,
             gauge: bool = True) -> Solution:
    """Preconditioned nonlinear conjugate gradients (Polak-Ribiere+) with
    backtracking Armijo line search over the admissible DOFs."""
    cfg = cfg or SolverConfig()
    fn = functional(model)
    mask = fn.mask
    N = model.vec_dim
    shape = model.u0.values.shape
    free = np.flatnonzero(mask)
    precond = _preconditioner(model, cfg)

    def evaluate(z):
        full = np.zeros(shape)
        full[free] = z.reshape(len(free), N)
        e, g = fn.value_and_gradient(full)
        return e, g[free].ravel()

    def apply_precond(g):
        if precond is None:
            return g.copy()
        return precond(g.reshape(len(free), N)).reshape(g.shape) if N > 1 else precond(g)

    z = np.zeros(len(free) * N)
    f, g = evaluate(z)
    g0 = float(np.linalg.norm(g))
    target = cfg.tol * (1.0 + g0)
    history = [f]
    s = apply_precond(g)
    d = -s
    gs_old = float(g @ s)
    t_prev, gd_prev = 1.0, None
    eps_f = 64 * np.finfo(float).eps
    msg = ""
    it = 0
    converged = float(np.linalg.norm(g)) <= target
    while not converged and it < cfg.max_iter:
        it += 1
        gd = float(g @ d)
        if gd >= 0:
            d = -s
            gd = float(g @ d)
        t = 1.0 if gd_prev is None or precond is not None else min(1e8, t_prev * gd_prev / gd)
        accepted = None
        for _ in range(cfg.max_backtracks):
            z_t = z + t * d
            f_t, g_t = evaluate(z_t)
            if not math.isfinite(f_t):
                t *= cfg.backtrack
                continue
            if f_t <= f + cfg.armijo * t * gd:
                accepted = (t, z_t, f_t, g_t)
                gd_t = float(g_t @ d)
                if abs(gd_t) > 0.1 * abs(gd) and gd_t > gd:
                    # secant step on the slope; exact for quadratic energies
                    t_s = t * gd / (gd - gd_t)
                    z_s = z + t_s * d
                    f_s, g_s = evaluate(z_s)
                    if math.isfinite(f_s) and f_s <= min(f_t, f + cfg.armijo * t_s * gd):
                        accepted = (t_s, z_s, f_s, g_s)
                break
            if abs(f_t - f) <= eps_f * max(1.0, abs(f)):
                # energy differences at rounding level: use the slope instead
                gd_t = float(g_t @ d)
                if gd_t > 0:
                    t = t * gd / (gd - gd_t)
                    z_t = z + t * d
                    f_t, g_t = evaluate(z_t)
                if f_t <= f + eps_f * max(1.0, abs(f)):
                    accepted = (t, z_t, f_t, g_t)
                break
            t *= cfg.backtrack
        if accepted is None:
            msg = ("non-finite energy in line search" if not math.isfinite(f_t)
                   else "line search failed to decrease the energy")
            log.warning(msg)
            break
        t, z_new, f_new, g_new = accepted
        s_new = apply_precond(g_new)
        beta = max(0.0, float(g_new @ (s_new - s)) / gs_old) if gs_old > 0 else 0.0
        t_prev, gd_prev = t, gd
        z, f, g, s = z_new, f_new, g_new, s_new
        gs_old = float(g @ s)
        d = -s + beta * d
        history.append(f)
        converged = float(np.linalg.norm(g)) <= target
    if not converged and not msg:
        msg = f"no convergence within {cfg.max_iter} iterations"
    full = np.zeros(shape)
    full[free] = z.reshape(len(free), N)
    return _finish(model, full, f, float(np.linalg.norm(g)), g0, it, converged, msg,
                   history, "none", gauge, cfg)


# -- linear p = 2 solve ---------------------------------------------------------------

def linear_hodge_solve(model: EnergyModel, cfg: SolverConfig | None = None, *,
                       gauge: bool = True) -> Solution:
    """Conjugate gradients on ``d^T M_a d v = d^T (M F - M_a d u0)`` (p ≡ 2)."""
    cfg = cfg or SolverConfig()
    if not np.all(model.p.values == 2.0):
        raise ModelError("linear_hodge_solve requires p ≡ 2")
    K, Ma, d, free = _stiffness(model)
    Mk1 = mass(model.complex, model.degree + 1).matrix
    rhs_full = d.T @ (Mk1 @ model.F.values - Ma @ (d @ model.u0.values))
    rhs = rhs_full[free]
    v = np.zeros_like(model.u0.values)
    iters = [0]

    def count(_):
        iters[0] += 1

    for j in range(model.vec_dim):
        b = rhs[:, j]
        if not np.any(b):
            continue
        x, info = spla.cg(K, b, rtol=cfg.linear_tol, atol=0.0,
                          maxiter=max(10 * K.shape[0], 1000), callback=count)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})")
        v[free, j] = x
    fn = functional(model)
    e, g = fn.value_and_gradient(v)
    _, g0v = fn.value_and_gradient(np.zeros_like(v))
    g0 = float(np.linalg.norm(g0v[free]))
    gn = float(np.linalg.norm(g[free]))
    return _finish(model, v, e, gn, g0, iters[0], True, "", [e], "none", gauge, cfg)


# -- div-curl systems -------------------------------------------------------------------

def div_curl_solve(f: Cochain | None, w: Cochain | None, mode: str = "normal",
                   datum: Cochain | None = None, *, degree: int | None = None,
                   complex=None, tol: float = 1e-12, check_tol: float = 1e-10) -> Cochain:
    """Least-squares solve of ``du = f``, ``d*u = w`` with a tangential
    (``nu ∧ u = nu ∧ datum``) or natural normal (``nu ⌟ u = 0``) trace."""
    ref = f if f is not None else (w if w is not None else datum)
    if ref is None:
        raise ValueError("need at least one of f, w, datum")
    cx = complex or ref.complex
    if degree is None:
        degree = f.degree - 1 if f is not None else (w.degree + 1 if w is not None else datum.degree)
    k, n = degree, cx.dim
    N = ref.vec_dim
    if mode not in ("normal", "tangential"):
        raise ValueError("mode must be 'normal' or 'tangential'")
    if f is None and k < n:
        f = Cochain.zeros(cx, k + 1, N)
    if w is None and k > 0:
        w = Cochain.zeros(cx, k - 1, N)
    if datum is None:
        datum = Cochain.zeros(cx, k, N)
    if mode == "normal" and np.any(datum.values):
        raise ValueError("normal mode supports only the zero datum")

    free_k = cx.interior_mask(k) if mode == "tangential" else np.ones(cx.count(k), bool)
    fk = np.flatnonzero(free_k)
    Mk = mass(cx, k).matrix

    # closedness and compatibility
    if f is not None and k + 1 < n:
        df = cx.coboundary_matrix(k + 1) @ f.values
        scale = max(1.0, float(np.abs(f.values).max()))
        if np.abs(df).max() > check_tol * scale:
            raise IncompatibleDataError(f"f is not closed: |df|_max = {np.abs(df).max():.3e}")
    A_blocks, rhs = [], np.zeros((len(fk), N))
    if f is not None:
        d = cx.coboundary_matrix(k)
        Mk1 = mass(cx, k + 1).matrix
        r = f.values - d @ datum.values
        if mode == "tangential":
            bnd = cx.boundary_flags[k + 1]
            if np.any(bnd) and np.abs(r[bnd]).max() > check_tol * max(1.0, np.abs(r).max()):
                raise IncompatibleDataError("tangential trace of f does not match d(datum)")
            if k + 1 == n:
                total = cx.cell_orientation @ r
                if np.abs(total).max() > check_tol * max(1.0, np.abs(r).sum()):
                    raise IncompatibleDataError(
                        f"compatibility integral violated: ∫(f - d datum) = {total}")
        D = d[:, fk]
        A_blocks.append(("curl", D, Mk1))
        rhs += D.T @ (Mk1 @ r)
    M_inv = None
    if w is not None:
        free_km1 = cx.interior_mask(k - 1) if mode == "tangential" else np.ones(cx.count(k - 1), bool)
        fm = np.flatnonzero(free_km1)
        Mkm1 = mass(cx, k - 1).matrix.tocsr()[fm][:, fm]
        lu = spla.splu(Mkm1.tocsc())
        M_inv = lu.solve
        Bfull = (cx.coboundary_matrix(k - 1).T @ Mk).tocsr()[fm]
        wf = w.values[fm]
        if k - 1 >= 1:
            dsw = _strong_codiff(cx, k - 1, wf, fm, mode)
            if np.abs(dsw).max() > check_tol * max(1.0, np.abs(w.values).max()):
                raise IncompatibleDataError("w is not co-closed")
        if k == 1 and mode == "normal":
            M0 = mass(cx, 0).matrix
            total = np.ones(cx.count(0)) @ (M0 @ w.values)
            if np.abs(total).max() > check_tol * max(1.0, np.abs(M0 @ w.values).sum()):
                raise IncompatibleDataError(f"compatibility integral violated: ∫w = {total}")
            ones = np.ones(cx.count(0))
            wf = wf - (total / (ones @ (M0 @ ones)))[None, :]
        B = Bfull[:, fk]
        c = _solve_cols(M_inv, Bfull @ datum.values) - wf
        rhs -= B.T @ c
        A_blocks.append(("div", B, M_inv))

    def matvec(x):
        x = np.asarray(x).ravel()
        y = np.zeros_like(x)
        for kind, Op, W in A_blocks:
            if kind == "curl":
                y += Op.T @ (W @ (Op @ x))
            else:
                y += Op.T @ W(Op @ x)
        return y

    A = spla.LinearOperator((len(fk), len(fk)), matvec=matvec, dtype=float)
    out = np.array(datum.values)
    for j in range(N):
        b = rhs[:, j]
        if not np.any(b):
            continue
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=max(20 * len(fk), 2000))
        if info != 0:
            raise RuntimeError(f"div-curl conjugate gradients failed (info={info})")
        out[fk, j] += x
    # harmonic ambiguities on contractible meshes
    if mode == "normal" and k == 0:
        ones = np.ones(cx.count(0))
        out = out - ((ones @ (Mk @ out)) / (ones @ (Mk @ ones)))[None, :]
    elif mode == "tangential" and k == n:
        s = cx.cell_orientation.astype(float)
        h = mass(cx, n).solve(s)
        out = out - np.outer(h, (s @ out) / (s @ h))
    return Cochain(cx, k, out)


def _solve_cols(solve, rhs):
    rhs = np.asarray(rhs)
    return np.stack([solve(np.ascontiguousarray(rhs[:, j])) for j in range(rhs.shape[1])], 1)


def _strong_codiff(cx, j, w_free, free_j, mode):
    """Strong d* of a j-cochain given on its free DOFs (zero elsewhere)."""
    full = np.zeros((cx.count(j), w_free.shape[1]))
    full[free_j] = w_free
    free_jm1 = cx.interior_mask(j - 1) if mode == "tangential" else np.ones(cx.count(j - 1), bool)
    fm = np.flatnonzero(free_jm1)
    M = mass(cx, j - 1).matrix.tocsr()[fm][:, fm]
    rhs = (cx.coboundary_matrix(j - 1).T @ (mass(cx, j).matrix @ full))[fm]
    lu = spla.splu(M.tocsc())
    return _solve_cols(lu.solve, rhs)


def coulomb_potential(omega: Cochain, *, tol: float = 1e-12, exact_tol: float = 1e-8) -> Cochain:
    """Potential ``u`` with ``du = omega``, ``d*u = 0`` and natural normal trace."""
    k = omega.degree - 1
    if k < 0:
        raise ValueError("omega must have degree >= 1")
    u = div_curl_solve(omega, None, "normal", degree=k, tol=tol)
    res = coboundary(u).values - omega.values
    scale = max(1e-300, float(np.abs(omega.values).max()))
    if np.any(omega.values) and np.abs(res).max() > exact_tol * scale:
        raise UnsupportedTopologyError(
            f"omega is not exact on this mesh (|du - omega|_max = {np.abs(res).max():.3e})")
    return u
