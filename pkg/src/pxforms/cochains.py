"""Discrete R^N-valued k-forms on a simplicial complex.

Lowest-order Whitney forms give the L2 pairing (consistent mass matrices,
exact polynomial integration) and the one-point barycentric reconstruction
used by every nonlinear integrand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exterior_algebra import DegreeError, FormValue, index_tuples, minor_matrix
from .mesh import SimplicialComplex


@dataclass(frozen=True, eq=False)
class Cochain:
    """One N-vector per oriented k-simplex; ``values`` has shape (count, N)."""

    complex: SimplicialComplex
    degree: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if not 0 <= self.degree <= self.complex.dim:
            raise DegreeError(f"degree {self.degree} outside 0..{self.complex.dim}")
        if v.shape[0] != self.complex.count(self.degree):
            raise ValueError(f"{self.degree}-cochain needs {self.complex.count(self.degree)} "
                             f"values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("cochain values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def vec_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, complex, degree, vec_dim=1) -> "Cochain":
        return cls(complex, degree, np.zeros((complex.count(degree), vec_dim)))

    def _like(self, values) -> "Cochain":
        return Cochain(self.complex, self.degree, values)

    def _check(self, other: "Cochain") -> None:
        if other.complex is not self.complex or other.degree != self.degree \
                or other.vec_dim != self.vec_dim:
            raise DegreeError("cochains live on different spaces")

    def __add__(self, other):
        self._check(other)
        return self._like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.values - other.values)

    def __mul__(self, s: float):
        return self._like(self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)


# -- local Whitney data ----------------------------------------------------------

def _local_faces(n: int, k: int) -> list[tuple[int, ...]]:
    return list(combinations(range(n + 1), k + 1))


def whitney_gram(complex: SimplicialComplex) -> np.ndarray:
    """Per-cell ``<dλ_a, dλ_b>_g`` (ncells, n+1, n+1)."""
    G = complex.grad_lambda
    return np.einsum("cai,cij,cbj->cab", G, complex.metric_inv, G)


def local_mass(complex: SimplicialComplex, k: int, gram: np.ndarray | None = None) -> np.ndarray:
    """Per-cell Whitney mass blocks (ncells, m, m), m = C(n+1, k+1), without weights."""
    n = complex.dim
    gram = whitney_gram(complex) if gram is None else gram
    faces = _local_faces(n, k)
    m = len(faces)
    out = np.zeros((complex.n_cells, m, m))
    fk = math.factorial(k) ** 2
    lam = np.full((n + 1, n + 1), 1.0 / ((n + 1) * (n + 2)))
    lam[np.diag_indices(n + 1)] *= 2.0
    for s, sig in enumerate(faces):
        for t, tau in enumerate(faces):
            acc = np.zeros(complex.n_cells)
            for i, a in enumerate(sig):
                rest_s = [x for x in sig if x != a]
                for j, b in enumerate(tau):
                    rest_t = [x for x in tau if x != b]
                    if k == 0:
                        det = 1.0
                    else:
                        det = np.linalg.det(gram[:, rest_s][:, :, rest_t])
                    acc += (-1) ** (i + j) * lam[a, b] * det
            out[:, s, t] = fk * acc
    return out * (complex.volumes * complex.sqrt_det)[:, None, None]


def local_reconstruction(complex: SimplicialComplex, k: int) -> np.ndarray:
    """Per-cell map from local k-face values to ``dx^I`` coefficients at the
    barycenter: (ncells, C(n,k), C(n+1,k+1))."""
    n = complex.dim
    G = complex.grad_lambda
    faces = _local_faces(n, k)
    tuples = index_tuples(n, k)
    out = np.zeros((complex.n_cells, len(tuples), len(faces)))
    scale = math.factorial(k) / (n + 1)
    for s, sig in enumerate(faces):
        for i, a in enumerate(sig):
            rest = [x for x in sig if x != a]
            for r, I in enumerate(tuples):
                if k == 0:
                    val = np.ones(complex.n_cells)
                else:
                    val = np.linalg.det(G[:, rest][:, :, list(I)])
                out[:, r, s] += (-1) ** i * scale * val
    return out


@dataclass(eq=False)
class MassOperator:
    """SPD bilinear form ``∫ <u, v> dV`` on k-cochains (optionally weighted per cell)."""

    complex: SimplicialComplex
    degree: int
    matrix: sp.csr_matrix

    @cached_property
    def _solver(self):
        return spla.factorized(self.matrix.tocsc())

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def pair(self, u, v) -> float:
        u = u.values if isinstance(u, Cochain) else np.asarray(u)
        v = v.values if isinstance(v, Cochain) else np.asarray(v)
        return float(np.sum(u * (self.matrix @ v)))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            return self._solver(rhs)
        return np.stack([self._solver(np.ascontiguousarray(rhs[:, j]))
                         for j in range(rhs.shape[1])], axis=1)

    def norm(self, u) -> float:
        return math.sqrt(max(self.pair(u, u), 0.0))


def assemble_mass(complex: SimplicialComplex, k: int, cell_weights=None) -> MassOperator:
    blocks = local_mass(complex, k)
    if cell_weights is not None:
        blocks = blocks * np.asarray(cell_weights, dtype=float)[:, None, None]
    ids = complex.cell_faces[k]
    m = ids.shape[1]
    rows = np.repeat(ids, m, axis=1).ravel()
    cols = np.tile(ids, (1, m)).ravel()
    M = sp.csr_matrix((blocks.ravel(), (rows, cols)),
                      shape=(complex.count(k), complex.count(k)))
    M.sum_duplicates()
    M = (0.5 * (M + M.T)).tocsr()
    return MassOperator(complex, k, M)


def mass(complex: SimplicialComplex, k: int) -> MassOperator:
    """Unweighted mass operator of degree k, cached on the complex."""
    key = ("mass", k)
    if key not in complex.cache:
        complex.cache[key] = assemble_mass(complex, k)
    return complex.cache[key]


def reconstruction_matrix(complex: SimplicialComplex, k: int) -> sp.csr_matrix:
    """Sparse map from a k-cochain to stacked barycentric coefficients
    (row ``c * C(n,k) + r`` holds coefficient ``r`` of cell ``c``)."""
    B = local_reconstruction(complex, k)
    nc, nr, nf = B.shape
    ids = complex.cell_faces[k]
    rows = np.repeat(np.arange(nc * nr).reshape(nc, nr), nf, axis=1).ravel()
    cols = np.broadcast_to(ids[:, None, :], (nc, nr, nf)).ravel()
    R = sp.csr_matrix((B.ravel(), (rows, cols)), shape=(nc * nr, complex.count(k)))
    R.sum_duplicates()
    return R


def pointwise_minors(complex: SimplicialComplex, k: int) -> np.ndarray:
    """Per-cell ``G^{IJ}`` for k-forms, (ncells, C(n,k), C(n,k))."""
    return minor_matrix(complex.metric_inv, k)


# -- operators -------------------------------------------------------------------

def coboundary(u: Cochain) -> Cochain:
    k = u.degree
    if k >= u.complex.dim:
        raise DegreeError(f"coboundary of a {k}-cochain in dimension {u.complex.dim}")
    return Cochain(u.complex, k + 1, u.complex.coboundary_matrix(k) @ u.values)


def codifferential(u: Cochain, mass_k: MassOperator | None = None,
                   mass_km1: MassOperator | None = None) -> Cochain:
    """Strong L2-adjoint of d: ``M_{k-1} d*u = d^T M_k u``."""
    k = u.degree
    if k == 0:
        raise DegreeError("codifferential of a 0-cochain is undefined")
    cx = u.complex
    mass_k = mass_k or mass(cx, k)
    mass_km1 = mass_km1 or mass(cx, k - 1)
    rhs = cx.coboundary_matrix(k - 1).T @ (mass_k.matrix @ u.values)
    return Cochain(cx, k - 1, mass_km1.solve(rhs))


def tangential_zero(u: Cochain) -> Cochain:
    """Zero the values on boundary simplices (discrete ``t u = 0``)."""
    vals = np.array(u.values)
    vals[u.complex.boundary_flags[u.degree]] = 0.0
    return u._like(vals)


def cell_values(u: Cochain) -> np.ndarray:
    """Barycentric Whitney reconstruction on every cell, (ncells, C(n,k), N)."""
    B = _reconstruction_cache(u.complex, u.degree)
    local = u.values[u.complex.cell_faces[u.degree]]          # (nc, nf, N)
    return np.einsum("crf,cfN->crN", B, local)


def _reconstruction_cache(complex, k):
    key = ("recon", k)
    if key not in complex.cache:
        complex.cache[key] = local_reconstruction(complex, k)
    return complex.cache[key]


def barycentric_value(u: Cochain, cell: int) -> FormValue:
    cx = u.complex
    if not 0 <= cell < cx.n_cells:
        raise IndexError(f"cell {cell} out of range")
    B = _reconstruction_cache(cx, u.degree)[cell]
    local = u.values[cx.cell_faces[u.degree][cell]]
    return FormValue(cx.dim, u.degree, B @ local)


def pointwise_norms(complex: SimplicialComplex, k: int, coeffs: np.ndarray) -> np.ndarray:
    """Metric norm of per-cell coefficients (ncells, C(n,k), N), summed over N."""
    Q = pointwise_minors(complex, k)
    sq = np.einsum("crN,crs,csN->c", coeffs, Q, coeffs)
    return np.sqrt(np.maximum(sq, 0.0))


def modular(u: Cochain, p_field) -> float:
    """``Σ_c w_c |u(bary_c)|^{p_c}`` with p sampled per cell."""
    p = np.broadcast_to(np.asarray(getattr(p_field, "values", p_field), dtype=float),
                        (u.complex.n_cells,))
    if np.any(p < 1):
        raise ValueError("modular exponent must be >= 1")
    r = pointwise_norms(u.complex, u.degree, cell_values(u))
    return float(np.sum(u.complex.weights * r ** p))


# -- interpolation of continuous forms ------------------------------------------

def _simplex_rule(k: int, order: int = 4):
    """Collapsed Gauss-Legendre rule on the reference k-simplex (weights sum to 1/k!)."""
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    pts = np.zeros((1, 0))
    wts = np.ones(1)
    for _ in range(k):
        # Duffy collapse: next coordinate is t * (1 - sum of previous)
        new_pts, new_wts = [], []
        for p, wt in zip(pts, wts):
            rem = 1.0 - p.sum()
            for xi, wi in zip(x, w):
                new_pts.append(np.append(p, xi * rem))
                new_wts.append(wt * wi * rem)
        pts, wts = np.array(new_pts), np.array(new_wts)
    return pts, wts


def interpolate(complex: SimplicialComplex, k: int, form, vec_dim: int = 1,
                order: int = 4) -> Cochain:
    """de Rham map: integrate a continuous k-form over every k-simplex.

    ``form(x)`` takes points (m, n) and returns coefficients (m, C(n,k), N)
    in canonical ``dx^I`` order (for k = 0, values (m, N) are accepted too).
    """
    n = complex.dim
    S = complex.simplices[k]
    X = complex.vertices
    pts, wts = _simplex_rule(k, order)
    base = X[S[:, 0]]                                   # (m, n)
    E = X[S[:, 1:]] - base[:, None, :]                  # (m, k, n)
    if k == 0:
        vals = np.asarray(form(base), dtype=float).reshape(len(S), -1)
        return Cochain(complex, 0, vals[:, :vec_dim] if vals.shape[1] >= vec_dim else vals)
    tuples = index_tuples(n, k)
    jac = np.stack([np.linalg.det(E[:, :, list(I)]) for I in tuples], axis=1)  # (m, C)
    out = np.zeros((len(S), vec_dim))
    for p, w in zip(pts, wts):
        x = base + np.einsum("d,mdn->mn", p, E)
        c = np.asarray(form(x), dtype=float).reshape(len(S), len(tuples), -1)
        out += w * np.einsum("mr,mrN->mN", jac, c)
    return Cochain(complex, k, out)


# -- file format ------------------------------------------------------------------

def write_cochain(u: Cochain, path) -> None:
    lines = [f"degree {u.degree} vecdim {u.vec_dim} count {len(u.values)}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in u.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cochain(path, complex: SimplicialComplex) -> Cochain:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = rows[0] if rows else []
    if len(head) != 6 or head[0] != "degree" or head[2] != "vecdim" or head[4] != "count":
        raise ValueError(f"{path}: header must be 'degree k vecdim N count m'")
    k, N, m = int(head[1]), int(head[3]), int(head[5])
    body = rows[1:]
    if len(body) != m or any(len(r) != N for r in body):
        raise ValueError(f"{path}: expected {m} rows of {N} values")
    return Cochain(complex, k, np.array(body, dtype=float).reshape(m, N))
