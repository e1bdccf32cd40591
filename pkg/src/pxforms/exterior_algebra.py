"""Pointwise algebra of R^N-valued alternating k-tensors on an inner-product space.

A :class:`FormValue` of degree ``k`` in ambient dimension ``n`` stores one
N-vector per strictly increasing index tuple ``I`` (0-based, lexicographic
order), i.e. a ``(C(n, k), N)`` coefficient array for the basis ``dx^I``.
All signs are computed from explicit permutation parity.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np


class DegreeError(ValueError):
    """Raised when an operation would leave the degree range 0..n."""


def permutation_sign(seq) -> int:
    """Parity of the permutation sorting ``seq``; 0 if ``seq`` has repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    # count inversions
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def index_tuples(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Strictly increasing k-tuples of ``range(n)`` in canonical order."""
    if k < 0 or k > n:
        return ()
    return tuple(combinations(range(n), k))


@lru_cache(maxsize=None)
def _position(n: int, k: int) -> dict:
    return {t: i for i, t in enumerate(index_tuples(n, k))}


@dataclass(frozen=True)
class MetricTensor:
    """Constant symmetric positive-definite metric ``g_ij``."""

    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: float

    @classmethod
    def from_matrix(cls, g) -> "MetricTensor":
        g = np.array(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("metric must be a square matrix")
        if not np.allclose(g, g.T, rtol=0, atol=1e-14 * max(1.0, np.abs(g).max())):
            raise ValueError("metric must be symmetric")
        g = 0.5 * (g + g.T)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise ValueError("metric must be positive definite") from exc
        g_inv = np.linalg.inv(g)
        g.setflags(write=False)
        g_inv.setflags(write=False)
        return cls(g, g_inv, float(np.sqrt(np.linalg.det(g))))

    @classmethod
    def euclidean(cls, n: int) -> "MetricTensor":
        return cls.from_matrix(np.eye(n))

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def minors(self, k: int) -> np.ndarray:
        """The matrix ``G^{IJ} = det(g^{-1}[I, J])`` over canonical k-tuples."""
        return minor_matrix(self.g_inv, k)


def minor_matrix(a: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix of ``a`` (batched over leading axes)."""
    n = a.shape[-1]
    tuples = index_tuples(n, k)
    out = np.empty(a.shape[:-2] + (len(tuples), len(tuples)))
    if k == 0:
        out[...] = 1.0
        return out
    for i, I in enumerate(tuples):
        rows = a[..., list(I), :]
        for j, J in enumerate(tuples):
            out[..., i, j] = np.linalg.det(rows[..., :, list(J)])
    return out


@dataclass(frozen=True)
class FormValue:
    """Value of an R^N-valued k-form at a point of an n-dimensional space."""

    n: int
    k: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if not 0 <= self.k <= self.n:
            raise DegreeError(f"degree {self.k} outside 0..{self.n}")
        if c.shape[0] != comb(self.n, self.k):
            raise ValueError(
                f"expected {comb(self.n, self.k)} coefficient slots, got {c.shape[0]}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def vec_dim(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def zero(cls, n: int, k: int, vec_dim: int = 1) -> "FormValue":
        return cls(n, k, np.zeros((comb(n, k), vec_dim)))

    @classmethod
    def basis(cls, n: int, index, vec_dim: int = 1) -> "FormValue":
        """Basis form ``dx^I`` (0-based indices), same value in every component."""
        index = tuple(index)
        k = len(index)
        c = np.zeros((comb(n, k), vec_dim))
        sign = permutation_sign(index)
        if sign:
            c[_position(n, k)[tuple(sorted(index))]] = sign
        return cls(n, k, c)

    def __getitem__(self, index) -> np.ndarray:
        """Coefficient at an arbitrary (possibly unsorted) index tuple."""
        index = tuple(index)
        sign = permutation_sign(index)
        if not sign:
            return np.zeros(self.vec_dim)
        return sign * self.coeffs[_position(self.n, self.k)[tuple(sorted(index))]]

    def __add__(self, other: "FormValue") -> "FormValue":
        _check_same(self, other)
        return FormValue(self.n, self.k, self.coeffs + other.coeffs)

    def __sub__(self, other: "FormValue") -> "FormValue":
        _check_same(self, other)
        return FormValue(self.n, self.k, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "FormValue":
        return FormValue(self.n, self.k, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "FormValue":
        return FormValue(self.n, self.k, -self.coeffs)

    def allclose(self, other: "FormValue", atol: float = 1e-12) -> bool:
        _check_same(self, other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0, atol=atol))


def _check_same(a: FormValue, b: FormValue) -> None:
    if a.n != b.n or a.k != b.k or a.vec_dim != b.vec_dim:
        raise DegreeError(
            f"mismatched forms: (n={a.n}, k={a.k}, N={a.vec_dim}) vs "
            f"(n={b.n}, k={b.k}, N={b.vec_dim})")


def wedge_covector(v, xi: FormValue) -> FormValue:
    """``v ∧ xi`` for a covector ``v``; raises :class:`DegreeError` if k = n."""
    v = np.asarray(v, dtype=float)
    n, k = xi.n, xi.k
    if v.shape != (n,):
        raise ValueError(f"covector must have {n} entries")
    if k >= n:
        raise DegreeError(f"wedge of a covector with a {k}-form exceeds n={n}")
    pos = _position(n, k)
    out = np.zeros((comb(n, k + 1), xi.vec_dim))
    for a, I in enumerate(index_tuples(n, k + 1)):
        for j, i_j in enumerate(I):
            rest = I[:j] + I[j + 1:]
            out[a] += (-1) ** j * v[i_j] * xi.coeffs[pos[rest]]
    return FormValue(n, k + 1, out)


def interior(v, xi: FormValue, g: MetricTensor | None = None) -> FormValue:
    """Interior product ``v ⌟ xi`` with the index of ``v`` raised by ``g``."""
    n, k = xi.n, xi.k
    if k == 0:
        raise DegreeError("interior product of a 0-form is undefined")
    g = g or MetricTensor.euclidean(n)
    v_up = g.g_inv @ np.asarray(v, dtype=float)
    out = np.zeros((comb(n, k - 1), xi.vec_dim))
    for a, I in enumerate(index_tuples(n, k - 1)):
        for j in range(n):
            out[a] += v_up[j] * xi[(j,) + I]
    return FormValue(n, k - 1, out)


def wedge(alpha: FormValue, beta: FormValue) -> FormValue:
    """Componentwise wedge product of two forms with equal ``vec_dim``."""
    n, k, l = alpha.n, alpha.k, beta.k
    if beta.n != n or alpha.vec_dim != beta.vec_dim:
        raise DegreeError("wedge of forms on different spaces")
    if k + l > n:
        raise DegreeError(f"wedge degree {k + l} exceeds n={n}")
    out = np.zeros((comb(n, k + l), alpha.vec_dim))
    pos = _position(n, k + l)
    for a, I in enumerate(index_tuples(n, k)):
        for b, J in enumerate(index_tuples(n, l)):
            sign = permutation_sign(I + J)
            if sign:
                out[pos[tuple(sorted(I + J))]] += sign * alpha.coeffs[a] * beta.coeffs[b]
    return FormValue(n, k + l, out)


def hodge_star(xi: FormValue, g: MetricTensor | None = None) -> FormValue:
    """``(⋆xi)_I = sqrt(g) G^{JK} xi_J sign(K, I)``."""
    n, k = xi.n, xi.k
    g = g or MetricTensor.euclidean(n)
    raised = g.minors(k) @ xi.coeffs  # (G xi)^K
    out = np.zeros((comb(n, n - k), xi.vec_dim))
    for a, I in enumerate(index_tuples(n, n - k)):
        for b, K in enumerate(index_tuples(n, k)):
            sign = permutation_sign(K + I)
            if sign:
                out[a] += sign * raised[b]
    return FormValue(n, n - k, g.sqrt_det * out)


def inner(xi: FormValue, eta: FormValue, g: MetricTensor | None = None) -> float:
    """Pointwise scalar product summed over the N components."""
    _check_same(xi, eta)
    g = g or MetricTensor.euclidean(xi.n)
    return float(np.einsum("iN,ij,jN->", xi.coeffs, g.minors(xi.k), eta.coeffs))


def norm(xi: FormValue, g: MetricTensor | None = None) -> float:
    return float(np.sqrt(max(inner(xi, xi, g), 0.0)))


def volume_form(n: int, g: MetricTensor | None = None, vec_dim: int = 1) -> FormValue:
    """``sqrt(g) dx^1 ∧ ... ∧ dx^n``."""
    g = g or MetricTensor.euclidean(n)
    return FormValue(n, n, np.full((1, vec_dim), g.sqrt_det))
