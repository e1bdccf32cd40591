"""Coefficient fields and the variable-exponent energy

    I[u] = ∫ a/p (μ² + |du|²)^{p/2} - <F, du> dV

with its Euler-Lagrange residual, plus moduli of continuity of p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cochains import (Cochain, coboundary, mass, pointwise_minors,
                       reconstruction_matrix)
from .exterior_algebra import FormValue, MetricTensor
from .mesh import SimplicialComplex

MU_FLOOR = 1e-8

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExponentField:
    values: np.ndarray
    p_minus: float
    p_plus: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not self.p_minus > 1:
            raise ModelError(f"exponent lower bound must satisfy p- > 1 (got {self.p_minus})")
        if not self.p_plus < math.inf or self.p_plus < self.p_minus:
            raise ModelError("exponent bounds must satisfy 1 < p- <= p+ < inf")
        if np.any(v < self.p_minus - 1e-12) or np.any(v > self.p_plus + 1e-12):
            raise ModelError(f"exponent samples leave [{self.p_minus}, {self.p_plus}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_samples(cls, values, p_minus=None, p_plus=None) -> "ExponentField":
        v = np.asarray(values, dtype=float).ravel()
        return cls(v, float(v.min()) if p_minus is None else p_minus,
                   float(v.max()) if p_plus is None else p_plus)

    @classmethod
    def constant(cls, complex: SimplicialComplex, p: float) -> "ExponentField":
        return cls(np.full(complex.n_cells, float(p)), float(p), float(p))

    @classmethod
    def from_function(cls, complex: SimplicialComplex, fn, p_minus=None, p_plus=None):
        return cls.from_samples(fn(complex.barycenters), p_minus, p_plus)

    @property
    def conjugate(self) -> np.ndarray:
        return self.values / (self.values - 1.0)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))


@dataclass(frozen=True, eq=False)
class WeightField:
    values: np.ndarray
    a_minus: float
    a_plus: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not (0 < self.a_minus <= self.a_plus < math.inf):
            raise ModelError("weight bounds must satisfy 0 < a- <= a+ < inf")
        if np.any(v < self.a_minus - 1e-12) or np.any(v > self.a_plus + 1e-12):
            raise ModelError("weight samples leave their declared bounds")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_samples(cls, values, a_minus=None, a_plus=None) -> "WeightField":
        v = np.asarray(values, dtype=float).ravel()
        return cls(v, float(v.min()) if a_minus is None else a_minus,
                   float(v.max()) if a_plus is None else a_plus)

    @classmethod
    def constant(cls, complex: SimplicialComplex, a: float = 1.0) -> "WeightField":
        return cls(np.full(complex.n_cells, float(a)), float(a), float(a))

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))


@dataclass(frozen=True, eq=False)
class EnergyModel:
    complex: SimplicialComplex
    degree: int
    p: ExponentField
    a: WeightField
    mu: float = 0.0
    F: Cochain | None = None
    u0: Cochain | None = None
    boundary: str = DIRICHLET
    vec_dim: int = 1
    mu_plus: float | None = None
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        cx, k, N = self.complex, self.degree, self.vec_dim
        if not 0 <= k < cx.dim:
            raise ModelError(f"potential degree must be in 0..{cx.dim - 1}")
        if self.mu < 0:
            raise ModelError("mu must be nonnegative")
        if self.mu_plus is not None and self.mu > self.mu_plus:
            raise ModelError("mu exceeds its cap mu+")
        if self.boundary not in (DIRICHLET, NEUMANN):
            raise ModelError(f"unknown boundary mode {self.boundary!r}")
        if len(self.p.values) != cx.n_cells or len(self.a.values) != cx.n_cells:
            raise ModelError("p and a must have one sample per top cell")
        F = self.F if self.F is not None else Cochain.zeros(cx, k + 1, N)
        u0 = self.u0 if self.u0 is not None else Cochain.zeros(cx, k, N)
        if F.degree != k + 1 or F.vec_dim != N or F.complex is not cx:
            raise ModelError("F must be a (k+1)-cochain with matching vec_dim")
        if u0.degree != k or u0.vec_dim != N or u0.complex is not cx:
            raise ModelError("u0 must be a k-cochain with matching vec_dim")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "u0", u0)

    @property
    def mu_eff(self) -> float:
        if self.mu == 0 and self.p.values.min() < 2:
            return MU_FLOOR
        return float(self.mu)

    @property
    def mu_substituted(self) -> bool:
        return self.mu_eff != self.mu

    @property
    def dof_mask(self) -> np.ndarray:
        """True on free degrees of freedom."""
        if self.boundary == DIRICHLET:
            return self.complex.interior_mask(self.degree)
        return np.ones(self.complex.count(self.degree), dtype=bool)

    @property
    def is_homogeneous(self) -> bool:
        return self.p.is_constant and self.a.is_constant and not np.any(self.F.values)

    def with_u0(self, u0: Cochain) -> "EnergyModel":
        return EnergyModel(self.complex, self.degree, self.p, self.a, self.mu, self.F, u0,
                           self.boundary, self.vec_dim, self.mu_plus)


# -- pointwise nonlinearities ---------------------------------------------------

def _check_q(q):
    if np.any(np.asarray(q) <= 1):
        raise ModelError("exponent q must exceed 1")


def energy_density(q: float, eta: FormValue, mu: float, g: MetricTensor | None = None) -> float:
    """``(μ² + |η|²)^{q/2} / q``."""
    _check_q(q)
    g = g or MetricTensor.euclidean(eta.n)
    r2 = float(np.einsum("iN,ij,jN->", eta.coeffs, g.minors(eta.k), eta.coeffs))
    return (mu * mu + r2) ** (q / 2) / q


def flux(q: float, eta: FormValue, mu: float, g: MetricTensor | None = None) -> FormValue:
    """``(μ² + |η|²)^{(q-2)/2} η``; the removable value 0 is returned at η = 0."""
    _check_q(q)
    g = g or MetricTensor.euclidean(eta.n)
    r2 = float(np.einsum("iN,ij,jN->", eta.coeffs, g.minors(eta.k), eta.coeffs))
    base = mu * mu + r2
    if base == 0.0:
        return FormValue.zero(eta.n, eta.k, eta.vec_dim)
    return FormValue(eta.n, eta.k, base ** ((q - 2) / 2) * eta.coeffs)


# -- discrete functional ------------------------------------------------------------

class EnergyFunctional:
    """Evaluates I and its gradient over the free DOFs of a model.

    ``v`` is a full array of k-cochain values (count, N); only DOFs selected by
    ``model.dof_mask`` may be nonzero.
    """

    def __init__(self, model: EnergyModel):
        self.model = model
        cx, k = model.complex, model.degree
        self.d = cx.coboundary_matrix(k)
        self.R = reconstruction_matrix(cx, k + 1)
        self.Q = pointwise_minors(cx, k + 1)
        self.ncomp = self.Q.shape[1]
        self.mass_w = cx.weights
        self.M = mass(cx, k + 1)
        self.MF = self.M.apply(model.F.values)
        self.mask = model.dof_mask
        self.mu2 = model.mu_eff ** 2
        self.p = model.p.values
        self.a = model.a.values
        self.du0 = self.d @ model.u0.values

    def check_admissible(self, v: np.ndarray) -> None:
        if np.any(v[~self.mask]):
            raise ModelError("v has nonzero values on constrained (boundary) DOFs")

    def omega(self, v: np.ndarray) -> np.ndarray:
        return self.du0 + self.d @ v

    def _coeffs(self, omega: np.ndarray) -> np.ndarray:
        return (self.R @ omega).reshape(-1, self.ncomp, omega.shape[1])

    def value(self, v: np.ndarray) -> float:
        return self.value_and_gradient(v, need_gradient=False)[0]

    def value_and_gradient(self, v: np.ndarray, need_gradient: bool = True):
        v = np.asarray(v, dtype=float).reshape(len(self.mask), -1)
        omega = self.omega(v)
        c = self._coeffs(omega)
        Qc = np.einsum("crs,csN->crN", self.Q, c)
        r2 = np.maximum(np.einsum("crN,crN->c", c, Qc), 0.0)
        base = self.mu2 + r2
        dens = self.a / self.p * base ** (self.p / 2)
        energy = math.fsum(self.mass_w * dens) - math.fsum((self.MF * omega).ravel())
        if not need_gradient:
            return energy, None
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(base > 0, base ** ((self.p - 2) / 2), 0.0)
        coef = self.mass_w * self.a * coef
        flux_cov = (coef[:, None, None] * Qc).reshape(-1, omega.shape[1])
        g_omega = self.R.T @ flux_cov - self.MF
        grad = self.d.T @ g_omega
        grad[~self.mask] = 0.0
        return energy, grad

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(v)[1]


def functional(model: EnergyModel) -> EnergyFunctional:
    if "functional" not in model.cache:
        model.cache["functional"] = EnergyFunctional(model)
    return model.cache["functional"]


def total_energy(model: EnergyModel, v: Cochain | None = None) -> float:
    fn = functional(model)
    vals = _values(model, v)
    fn.check_admissible(vals)
    return fn.value(vals)


def energy_gradient(model: EnergyModel, v: Cochain | None = None) -> Cochain:
    fn = functional(model)
    vals = _values(model, v)
    fn.check_admissible(vals)
    return Cochain(model.complex, model.degree, fn.gradient(vals))


def _values(model: EnergyModel, v) -> np.ndarray:
    if v is None:
        return np.zeros_like(model.u0.values)
    if v.degree != model.degree or v.vec_dim != model.vec_dim:
        raise ModelError("v and u0 differ in degree or vec_dim")
    return v.values


# -- exponent moduli ----------------------------------------------------------------

@dataclass(frozen=True)
class ExponentModuli:
    radii: np.ndarray
    theta: np.ndarray            # Θ_p(R)
    c_log: float
    vanishing: np.ndarray        # Θ_p(R) log(1/R)
    holder_constant: float
    holder_exponent: float | None
    degenerate: bool = False
    constant: bool = False


def exponent_moduli(p: ExponentField, complex: SimplicialComplex, radii,
                    chunk: int = 2048) -> ExponentModuli:
    radii = np.sort(np.asarray(radii, dtype=float))
    if len(radii) < 2:
        raise ValueError("need at least two radii")
    x = complex.barycenters
    pv = p.values
    nc = len(pv)
    theta = np.zeros(len(radii))
    c_log = 0.0
    if nc < 2:
        return ExponentModuli(radii, theta, 0.0, theta.copy(), 0.0, None, degenerate=True)
    for start in range(0, nc, chunk):
        xs, ps = x[start:start + chunk], pv[start:start + chunk]
        dist = np.linalg.norm(xs[:, None, :] - x[None, :, :], axis=2)
        dp = np.abs(ps[:, None] - pv[None, :])
        off = dist > 0
        c_log = max(c_log, float(np.max(dp[off] * np.log(math.e + 1.0 / dist[off]),
                                        initial=0.0)))
        for i, R in enumerate(radii):
            theta[i] = max(theta[i], float(np.max(np.where(dist <= R, dp, 0.0))))
    with np.errstate(divide="ignore"):
        vanishing = theta * np.log(1.0 / radii)
    pos = theta > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(np.log(radii[pos]), np.log(theta[pos]), 1)
        c_h, alpha = float(np.exp(icpt)), float(slope)
    else:
        c_h, alpha = float(theta.max()), None
    return ExponentModuli(radii, theta, c_log, vanishing, c_h, alpha,
                          constant=not np.any(theta))
