"""Regularity diagnostics on computed forms and the algebraic inequality battery.

Fields enter the ball statistics as per-cell samples taken at barycenters:
either a :class:`Cochain` (reconstructed with Whitney forms) or a raw array of
shape ``(ncells,)`` of pointwise norms, or ``(ncells, C(n,k), N)`` of
coefficients.  All ball integrals are one-point quadratures over the member
cells of a :class:`BallSample`.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cochains import Cochain, cell_values, pointwise_minors, pointwise_norms
from .mesh import BallSample, SimplicialComplex, ball, interior_centers
from .model import EnergyModel, ExponentField

C_PROBE = 10.0
DEFAULT_SIGMAS = tuple(np.round(np.arange(1, 20) / 20.0, 2))
# Brute-force grid maximum of |xi|^p / (mu^p + |eta|^p + pairing) over
# p in [1.1, 8], mu in [0, 2] is 3.782 (scripts/brute_force_c_test.py); doubled.
C_TEST = 7.564
MARGIN_TOL = 1e-10


class DiagnosticError(ValueError):
    """Raised when a diagnostic cannot be evaluated on the given data."""


# -- per-cell samples ---------------------------------------------------------------

@dataclass(frozen=True)
class CellField:
    """Per-cell coefficients and metric minors of a sampled form."""

    complex: SimplicialComplex
    coeffs: np.ndarray          # (ncells, C, N)
    minors: np.ndarray          # (ncells, C, C)

    @property
    def norms(self) -> np.ndarray:
        sq = np.einsum("crN,crs,csN->c", self.coeffs, self.minors, self.coeffs)
        return np.sqrt(np.maximum(sq, 0.0))

    def deviation_norms(self, members: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """``|f - (f)_B|`` on the members, with the weighted coefficient mean."""
        c = self.coeffs[members]
        mean = np.einsum("c,crN->rN", weights, c) / weights.sum()
        dev = c - mean
        sq = np.einsum("crN,crs,csN->c", dev, self.minors[members], dev)
        return np.sqrt(np.maximum(sq, 0.0))


def sample(field, complex: SimplicialComplex | None = None) -> CellField:
    """Normalize a Cochain or a per-cell array into a :class:`CellField`."""
    if isinstance(field, CellField):
        return field
    if isinstance(field, Cochain):
        cx = field.complex
        return CellField(cx, cell_values(field), pointwise_minors(cx, field.degree))
    if complex is None:
        raise DiagnosticError("raw samples need the complex they live on")
    arr = np.asarray(field, dtype=float)
    if arr.shape[0] != complex.n_cells:
        raise DiagnosticError(f"expected {complex.n_cells} cell samples, got {arr.shape[0]}")
    if arr.ndim == 1:
        # scalar norms: a single component with the trivial metric
        return CellField(complex, np.abs(arr)[:, None, None], np.ones((len(arr), 1, 1)))
    if arr.ndim == 2:
        arr = arr[:, :, None]
    C = arr.shape[1]
    return CellField(complex, arr, np.broadcast_to(np.eye(C), (len(arr), C, C)))


def _exponent_values(exponent, complex: SimplicialComplex) -> np.ndarray:
    vals = getattr(exponent, "values", exponent)
    return np.broadcast_to(np.asarray(vals, dtype=float), (complex.n_cells,))


def local_modular(field, exponent, b: BallSample, complex: SimplicialComplex | None = None) -> float:
    """``Σ_{c in B} w_c |f(bary_c)|^{q_c}``."""
    if b.empty:
        raise DiagnosticError(f"empty ball at {b.center.tolist()} radius {b.radius!r}")
    f = sample(field, complex)
    q = _exponent_values(exponent, f.complex)[b.members]
    return float(np.sum(b.weights * f.norms[b.members] ** q))


def p2_of_r(p: ExponentField, complex: SimplicialComplex, center, r: float) -> float:
    """Maximum of p over the closed ball of radius 4r."""
    b = ball(complex, center, 4.0 * r, closed=True)
    if b.empty:
        raise DiagnosticError(f"no cells within 4r = {4 * r!r} of {np.ravel(center).tolist()}")
    return float(p.values[b.members].max())


# -- decay fits ---------------------------------------------------------------------

@dataclass
class DecayFit:
    radii: np.ndarray
    values: np.ndarray
    slope: float
    log_constant: float
    r2: float
    center: np.ndarray | None = None
    dropped: int = 0
    degenerate: bool = False
    exact: bool = False
    per_center: list = field(default_factory=list, repr=False)

    def fitted(self) -> np.ndarray:
        return np.exp(self.log_constant) * self.radii ** self.slope


def _loglog(radii, values) -> tuple[float, float, float]:
    x, y = np.log(radii), np.log(values)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + c)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(c), r2


def _check_radii(radii, centers, dim):
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if len(radii) < 3:
        raise DiagnosticError("decay fits need at least 3 radii")
    if np.any(radii <= 0):
        raise DiagnosticError("radii must be positive")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] < 1 or centers.shape[1] != dim:
        raise DiagnosticError("need at least one center of the mesh dimension")
    return radii, centers


def _fit_levels(radii, values, center, what) -> DecayFit:
    """Log-log fit after dropping empty levels; all-zero data is degenerate."""
    keep = np.isfinite(values)
    dropped = int((~keep).sum())
    if dropped:
        warnings.warn(f"{what}: dropped {dropped} empty ball level(s) at {center.tolist()}",
                      RuntimeWarning, stacklevel=3)
    r, v = radii[keep], values[keep]
    if len(r) < 3:
        raise DiagnosticError(f"{what}: fewer than 3 nonempty levels at {center.tolist()}")
    scale = max(float(np.abs(v).max()), 1e-300)
    if np.all(v <= 1e-14 * scale) or np.all(v == 0):
        return DecayFit(r, v, math.nan, math.nan, math.nan, center, dropped, degenerate=True)
    pos = v > 0
    if pos.sum() < 3:
        return DecayFit(r, v, math.nan, math.nan, math.nan, center, dropped, degenerate=True)
    slope, c, r2 = _loglog(r[pos], v[pos])
    return DecayFit(r, v, slope, c, r2, center, dropped + int((~pos).sum()))


def morrey_fit(omega, p: ExponentField, centers, radii,
               complex: SimplicialComplex | None = None) -> DecayFit:
    """Worst-center slope of ``r -> ∫_{B_r} |ω|^{p_2(r)}``; τ = n - slope."""
    f = sample(omega, complex)
    cx = f.complex
    radii, centers = _check_radii(radii, centers, cx.dim)
    norms = f.norms
    fits = []
    for x0 in centers:
        vals = np.full(len(radii), np.nan)
        for j, r in enumerate(radii):
            b = ball(cx, x0, r)
            if b.empty:
                continue
            q = p2_of_r(p, cx, x0, r)
            vals[j] = float(np.sum(b.weights * norms[b.members] ** q))
        fits.append(_fit_levels(radii, vals, x0, "morrey_fit"))
    live = [ft for ft in fits if not ft.degenerate]
    if not live:
        out = fits[0]
        out.per_center = fits
        return out
    worst = min(live, key=lambda ft: ft.slope)
    worst.per_center = fits
    return worst


def campanato_fit(omega, pminus: float, centers, radii,
                  complex: SimplicialComplex | None = None) -> tuple[DecayFit, float, dict]:
    """Average-oscillation decay; returns the fit, α̃ and flags.

    The fitted slope of ``⨍_{B_ρ} |ω - (ω)_ρ|^{p⁻}`` is ``p⁻ β``; α̃ is the
    worst-center β clamped to [0, 1].
    """
    if not pminus > 1:
        raise DiagnosticError("p- must exceed 1")
    f = sample(omega, complex)
    cx = f.complex
    radii, centers = _check_radii(radii, centers, cx.dim)
    scale = max(float(f.norms.max()), 1e-300)
    fits = []
    for x0 in centers:
        vals = np.full(len(radii), np.nan)
        for j, r in enumerate(radii):
            b = ball(cx, x0, r)
            if b.empty:
                continue
            dev = f.deviation_norms(b.members, b.weights)
            # relative rounding floor so constant fields read as exactly flat
            dev = np.where(dev <= 1e-12 * scale, 0.0, dev)
            vals[j] = float(np.sum(b.weights * dev ** pminus) / b.total)
        fits.append(_fit_levels(radii, vals, x0, "campanato_fit"))
    live = [ft for ft in fits if not ft.degenerate]
    if not live:
        out = fits[0]
        out.exact = True
        out.per_center = fits
        return out, 1.0, {"exact": True, "clamped": False, "beta": math.inf}
    worst = min(live, key=lambda ft: ft.slope)
    worst.per_center = fits
    beta = worst.slope / pminus
    alpha = float(min(max(beta, 0.0), 1.0))
    return worst, alpha, {"exact": False, "clamped": alpha != beta, "beta": beta}


# -- Meyers probe -------------------------------------------------------------------

@dataclass
class MeyersResult:
    sigma_star: float
    sigmas: np.ndarray
    worst_ratio: np.ndarray
    pairs: int
    c_probe: float


def ball_pairs(complex: SimplicialComplex, R: float, spacing: float | None = None):
    """Nested (B_{R/2}, B_R) pairs centered on an interior lattice."""
    out = []
    for x0 in interior_centers(complex, R, spacing):
        outer = ball(complex, x0, R)
        inner = ball(complex, x0, 0.5 * R)
        if not inner.empty:
            out.append((inner, outer))
    return out


def meyers_probe(omega, p: ExponentField, F=None, pairs=None, *, xi=None,
                 sigmas=DEFAULT_SIGMAS, c_probe: float = C_PROBE, R: float | None = None,
                 complex: SimplicialComplex | None = None) -> MeyersResult:
    """Reverse-Hölder probe; σ* is the last grid σ before the first ratio above 1.

    ratio(σ) = (⨍_{R/2} |ω|^{p(1+σ)})^{1/(1+σ)} /
               (c ⨍_R |ω|^p + c (1 + ⨍_R |F - ξ|^{(1+σ) p'})^{1/(1+σ)}),
    with ξ the componentwise F-mean over B_R unless given.
    """
    f = sample(omega, complex)
    cx = f.complex
    sigmas = np.asarray(sigmas, dtype=float)
    if len(sigmas) == 0 or np.any(sigmas <= 0) or np.any(sigmas >= 1):
        raise DiagnosticError("sigma grid must be a nonempty subset of (0, 1)")
    if np.any(np.diff(sigmas) <= 0):
        raise DiagnosticError("sigma grid must be increasing")
    if pairs is None:
        pairs = ball_pairs(cx, R if R is not None else 0.25)
    if not pairs:
        raise DiagnosticError("no valid ball pair")
    pv = _exponent_values(p, cx)
    pc = pv / (pv - 1.0)
    wn = f.norms
    Ff = sample(F, cx) if F is not None else None
    worst = np.zeros(len(sigmas))
    for inner, outer in pairs:
        if outer.empty or inner.empty:
            raise DiagnosticError("empty ball in pair")
        mi, mo = inner.members, outer.members
        if Ff is None:
            dev = np.zeros(len(mo))
        elif xi is None:
            dev = Ff.deviation_norms(mo, outer.weights)
        else:
            x = np.asarray(xi, dtype=float).reshape(Ff.coeffs.shape[1:])
            d = Ff.coeffs[mo] - x
            dev = np.sqrt(np.maximum(np.einsum("crN,crs,csN->c", d, Ff.minors[mo], d), 0.0))
        base = np.sum(outer.weights * wn[mo] ** pv[mo]) / outer.total
        for j, s in enumerate(sigmas):
            lhs = (np.sum(inner.weights * wn[mi] ** (pv[mi] * (1 + s))) / inner.total) ** (1 / (1 + s))
            ft = np.sum(outer.weights * dev ** ((1 + s) * pc[mo])) / outer.total
            rhs = c_probe * base + c_probe * (1.0 + ft) ** (1 / (1 + s))
            worst[j] = max(worst[j], lhs / rhs)
    fail = np.flatnonzero(worst > 1.0)
    if len(fail) == 0:
        star = float(sigmas[-1])
    elif fail[0] == 0:
        star = 0.0
    else:
        star = float(sigmas[fail[0] - 1])
    return MeyersResult(star, sigmas, worst, len(pairs), c_probe)


# -- Uhlenbeck check ----------------------------------------------------------------

@dataclass
class UhlenbeckResult:
    c1_meas: float
    beta_meas: float
    ratios: np.ndarray
    campanato: DecayFit
    exact: bool


def uhlenbeck_check(model: EnergyModel, omega: Cochain, pairs, radii=None) -> UhlenbeckResult:
    """Sup-to-mean ratios and oscillation decay for a homogeneous constant-p run."""
    if not model.is_homogeneous:
        raise DiagnosticError(
            "uhlenbeck_check needs constant p and a and F = 0; this run is not homogeneous")
    if not pairs:
        raise DiagnosticError("no valid ball pair")
    p = float(model.p.values[0])
    mu = model.mu
    f = sample(omega)
    wn = f.norms
    ratios = []
    for inner, outer in pairs:
        sup = float(wn[inner.members].max())
        mean = float(np.sum(outer.weights * (mu**2 + wn[outer.members] ** 2) ** (p / 2))
                     / outer.total) ** (1 / p)
        ratios.append(sup / mean if mean > 0 else 0.0)
    ratios = np.asarray(ratios)
    centers = np.array([outer.center for _, outer in pairs])
    if radii is None:
        R = pairs[0][1].radius
        radii = [R * 2.0 ** (-j) for j in range(4)]
    fit, _, info = campanato_fit(f, p, centers, radii)
    beta = math.inf if info["exact"] else info["beta"]
    return UhlenbeckResult(float(ratios.max()), beta, ratios, fit, info["exact"])


# -- regularity report ----------------------------------------------------------------

@dataclass
class RegularityReport:
    meyers: MeyersResult | None = None
    morrey: DecayFit | None = None
    campanato: DecayFit | None = None
    alpha: float | None = None
    alpha_flags: dict = field(default_factory=dict)
    uhlenbeck: UhlenbeckResult | None = None
    K0: float | None = None
    moduli: object = None

    def tau(self) -> float | None:
        if self.morrey is None or self.morrey.degenerate:
            return None
        return len(self.morrey.center) - self.morrey.slope


# -- algebraic inequality battery ---------------------------------------------------------

M_CHOICES = (1, 2, 3, 6)


def _norm2(x):
    return np.einsum("ij,ij->i", x, x)


def _pow_ratio(base_num, base_den, e):
    """``(base_num / base_den)^e - 1`` without cancellation."""
    return np.expm1(e * np.log1p(base_num / base_den))


def _a_coeff(mu, n2, e):
    """``(mu^2 + n2)^e`` with ``0^e = 0`` for the degenerate base."""
    base = mu**2 + n2
    safe = np.where(base > 0, base, 1.0)
    return np.where(base > 0, safe ** e, 0.0)


def _pairing(xi, eta, mu, p):
    """``<A(xi) - A(eta), xi - eta>`` with A(x) = (mu^2+|x|^2)^{(p-2)/2} x.

    Uses the symmetric splitting
    ½(a_x + a_y)|x-y|^2 + ½(a_x - a_y)(|x|^2 - |y|^2), where the difference
    of the coefficients is formed through expm1/log1p.
    """
    d = xi - eta
    d2 = _norm2(d)
    nx, ny = _norm2(xi), _norm2(eta)
    e = (p - 2) / 2
    ax, ay = _a_coeff(mu, nx, e), _a_coeff(mu, ny, e)
    dn = np.einsum("ij,ij->i", d, xi + eta)       # |x|^2 - |y|^2
    lo = np.minimum(nx, ny) + mu**2
    hi_is_x = nx >= ny
    a_lo = np.where(hi_is_x, ay, ax)
    both = lo > 0
    lo_safe = np.where(both, lo, 1.0)
    diff = np.where(both, a_lo * _pow_ratio(np.abs(dn), lo_safe, e), np.abs(ax - ay))
    diff = np.where(hi_is_x, diff, -diff)         # a_x - a_y
    return 0.5 * (ax + ay) * d2 + 0.5 * diff * dn


def _v_diff_sq(xi, eta, mu, p):
    """``|V(xi) - V(eta)|^2`` with V(x) = (mu^2+|x|^2)^{(p-2)/4} x."""
    e = (p - 2) / 4
    nx, ny = _norm2(xi), _norm2(eta)
    bx, by = _a_coeff(mu, nx, e), _a_coeff(mu, ny, e)
    dn = nx - ny
    base = ny + mu**2
    both = (base > 0) & (nx + mu**2 > 0)
    base_safe = np.where(both, base, 1.0)
    # b_x - b_y = b_y * ((1 + dn/base)^e - 1); dn/base >= -1
    ratio = np.maximum(dn / base_safe, -1.0 + 1e-300)
    db = np.where(both, by * np.expm1(e * np.log1p(ratio)), bx - by)
    v = bx[:, None] * (xi - eta) + db[:, None] * eta
    return _norm2(v)


def _phi_shifted(t, mu, p):
    """``(mu^2 + t^2)^{p/2} - mu^p`` without cancellation for t << mu."""
    pos = mu > 0
    mu_safe = np.where(pos, mu, 1.0)
    shifted = mu_safe**p * np.expm1((p / 2) * np.log1p((t / mu_safe) ** 2))
    return np.where(pos, shifted, t**p)


def _draw_pairs(rng, n, mu_max=2.0):
    """Pairs (xi, eta) in R^m (padded to 6) covering several regimes."""
    m = rng.choice(M_CHOICES, size=n)
    mask = np.arange(6)[None, :] < m[:, None]
    scale = 10.0 ** rng.uniform(-3, 3, size=n)
    xi = rng.standard_normal((n, 6)) * mask
    xi *= (scale / np.maximum(np.linalg.norm(xi, axis=1), 1e-300))[:, None]
    regime = rng.integers(0, 5, size=n)
    noise = rng.standard_normal((n, 6)) * mask
    noise /= np.maximum(np.linalg.norm(noise, axis=1), 1e-300)[:, None]
    eta = np.empty_like(xi)
    # 0: independent magnitude/direction
    s0 = 10.0 ** rng.uniform(-3, 3, size=n)
    eta0 = noise * s0[:, None]
    # 1: near-equal
    eps = 10.0 ** rng.uniform(-6, 0, size=n)
    eta1 = xi + noise * (eps * scale)[:, None]
    # 2: collinear, same direction
    t = rng.uniform(0, 1.5, size=n)
    eta2 = xi * t[:, None]
    # 3: antiparallel with a small perturbation
    eta3 = -xi * rng.uniform(0, 1.5, size=n)[:, None] + noise * (0.05 * scale)[:, None]
    # 4: exactly equal or zero
    eta4 = np.where((rng.random(n) < 0.5)[:, None], xi, 0.0 * xi)
    for r, e in enumerate((eta0, eta1, eta2, eta3, eta4)):
        sel = regime == r
        eta[sel] = e[sel]
    mu = rng.uniform(0, mu_max, size=n)
    mu[rng.random(n) < 0.1] = 0.0
    return xi, eta, mu, m


@dataclass
class InequalityResult:
    name: str
    samples: int
    violations: int
    worst_margin: float
    witness: dict | None


@dataclass
class AlgebraReport:
    seed: int
    results: list

    @property
    def passed(self) -> bool:
        return all(r.violations == 0 for r in self.results)

    def lines(self) -> list[str]:
        out = [f"algebra.seed = {self.seed}", f"algebra.passed = {str(self.passed).lower()}"]
        for r in self.results:
            out.append(f"algebra.{r.name}.samples = {r.samples}")
            out.append(f"algebra.{r.name}.violations = {r.violations}")
            out.append(f"algebra.{r.name}.worst_margin = {r.worst_margin!r}")
            if r.witness is not None:
                for k in sorted(r.witness):
                    out.append(f"algebra.{r.name}.witness.{k} = {r.witness[k]!r}")
        return out


def _relative_margin(lhs, rhs):
    """(rhs - lhs) / scale; nonnegative iff lhs <= rhs."""
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    return (rhs - lhs) / scale


# Each check: name, p-range, function(xi, eta, mu, p, inject) -> (lhs, rhs)

def _chk_alg1(xi, eta, mu, p, inject):
    c = 2.0 if inject else 2.0 ** (1 - p)
    return c * _norm2(xi - eta) ** (p / 2), _pairing(xi, eta, 0.0 * mu, p)


def _chk_alg2(xi, eta, mu, p, inject):
    d2 = _norm2(xi - eta)
    lhs = (p - 1) * _a_coeff(0.0, _norm2(xi) + _norm2(eta), (p - 2) / 2) * d2
    return lhs, _pairing(xi, eta, 0.0 * mu, p)


def _chk_mu1(xi, eta, mu, p, inject):
    d2 = _norm2(xi - eta)
    mu_term = np.where(mu > 0, np.where(mu > 0, mu, 1.0) ** (p - 2), 0.0)
    lhs = 2.0 ** (-p) * d2 ** (p / 2) + 0.25 * mu_term * d2
    return lhs, _pairing(xi, eta, mu, p)


def _chk_mu2(xi, eta, mu, p, inject):
    d2 = _norm2(xi - eta)
    lhs = (p - 1) * _a_coeff(0.0, 2 * mu**2 + _norm2(xi) + _norm2(eta), (p - 2) / 2) * d2
    return lhs, _pairing(xi, eta, mu, p)


def _chk_mu3(xi, eta, mu, p, inject):
    # p+ = p is the strongest admissible choice of the upper bound
    return _norm2(xi - eta) ** (p / 2), 2.0 ** p * _v_diff_sq(xi, eta, mu, p)


def _chk_comparison(xi, eta, mu, p, inject):
    c = 2.0 ** (p + 2)
    nx, ny = _norm2(xi), _norm2(eta)
    rhs = c * ny ** (p / 2) + c * _a_coeff(0.0, nx + ny, (p - 2) / 2) * _norm2(xi - eta)
    return nx ** (p / 2), rhs


def _chk_comparison_mu(xi, eta, mu, p, inject):
    c = 20.0
    nx, ny = _norm2(xi), _norm2(eta)
    rhs = (c * mu**p + c * ny ** (p / 2)
           + c * _a_coeff(mu, nx + ny, (p - 2) / 2) * _norm2(xi - eta))
    return nx ** (p / 2), rhs


def _chk_pairing_bound(xi, eta, mu, p, inject):
    nx, ny = _norm2(xi), _norm2(eta)
    rhs = C_TEST * (mu**p + ny ** (p / 2) + _pairing(xi, eta, mu, p))
    return nx ** (p / 2), rhs


def _convexity_sample(xi, eta, mu, p):
    # reuse the magnitudes of the drawn pair as (u, v)
    u = np.sqrt(_norm2(xi))
    v = np.sqrt(_norm2(eta))
    hi = np.maximum(u, v)
    eps = np.where(hi > 0, np.abs(u - v) / np.where(hi > 0, hi, 1.0), 0.0)
    mid = _phi_shifted(0.5 * (u + v), mu, p)
    avg = 0.5 * (_phi_shifted(u, mu, p) + _phi_shifted(v, mu, p))
    return eps, mid, avg


def _chk_convexity_hi(xi, eta, mu, p, inject):
    eps, mid, avg = _convexity_sample(xi, eta, mu, p)
    delta = (eps / 2) ** p
    return mid, (1 - delta) * avg


def _chk_convexity_lo(xi, eta, mu, p, inject):
    eps, mid, avg = _convexity_sample(xi, eta, mu, p)
    delta = (1 - 2.0 ** (1 - p)) * (eps / 2) ** (p / (p - 1))
    return mid, (1 - delta) * avg


CHECKS = (
    ("alg1", (2.0, 8.0), _chk_alg1),
    ("alg2", (1.1, 2.0), _chk_alg2),
    ("mu1", (2.0, 8.0), _chk_mu1),
    ("mu2", (1.1, 2.0), _chk_mu2),
    ("mu3", (2.0, 8.0), _chk_mu3),
    ("comparison", (2.0, 8.0), _chk_comparison),
    ("comparison_mu", (1.1, 2.0), _chk_comparison_mu),
    ("pairing_bound", (1.1, 8.0), _chk_pairing_bound),
    ("convexity_p_ge_2", (2.0, 8.0), _chk_convexity_hi),
    ("convexity_p_le_2", (1.1, 2.0), _chk_convexity_lo),
)


def _run_batch(check, p_range, p_bounds, mu_range, seed_seq, n, inject):
    rng = np.random.default_rng(seed_seq)
    lo, hi = max(p_range[0], p_bounds[0]), min(p_range[1], p_bounds[1])
    xi, eta, mu, m = _draw_pairs(rng, n)
    mu = mu_range[0] + (mu / 2.0) * (mu_range[1] - mu_range[0])
    p = rng.uniform(lo, hi, size=n)
    # pin the endpoints of the range
    p[:2] = (lo, hi)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lhs, rhs = check(xi, eta, mu, p, inject)
        margin = _relative_margin(lhs, rhs)
    bad = ~np.isfinite(margin) | (margin < -MARGIN_TOL)
    i = int(np.nanargmin(np.where(np.isfinite(margin), margin, -np.inf)))
    witness = {"xi": xi[i, :m[i]].tolist(), "eta": eta[i, :m[i]].tolist(),
               "mu": float(mu[i]), "p": float(p[i]), "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    return int(bad.sum()), float(margin[i]), witness


def algebra_suite(seed: int = 42, samples: int = 100_000, p_bounds=(1.1, 8.0),
                  mu_range=(0.0, 2.0), *, inject: bool = False, batch: int = 25_000,
                  workers: int = 1) -> AlgebraReport:
    """Random property checks of the algebraic inequalities with explicit constants.

    Every inequality gets ``samples`` draws with p restricted to its own
    validity range intersected with ``p_bounds``.  Batches are seeded from
    ``(seed, inequality index, batch index)`` so results do not depend on
    ``workers``.  ``inject`` swaps the alg1 factor for a wrong one.
    """
    if not 1 < p_bounds[0] <= p_bounds[1] < math.inf:
        raise DiagnosticError("p range must lie in (1, inf)")
    if mu_range[0] < 0 or mu_range[1] < mu_range[0]:
        raise DiagnosticError("mu range must be a nonnegative interval")
    jobs = []
    for idx, (name, p_range, check) in enumerate(CHECKS):
        if max(p_range[0], p_bounds[0]) > min(p_range[1], p_bounds[1]):
            continue
        sizes = [batch] * (samples // batch) + ([samples % batch] if samples % batch else [])
        seqs = np.random.SeedSequence([seed, idx]).spawn(len(sizes))
        jobs.append((name, [(check, p_range, p_bounds, mu_range, s, n, inject)
                            for s, n in zip(seqs, sizes)]))
    flat = [args for _, batches in jobs for args in batches]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(lambda a: _run_batch(*a), flat))
    else:
        outs = [_run_batch(*a) for a in flat]
    results, pos = [], 0
    for name, batches in jobs:
        part = outs[pos:pos + len(batches)]
        pos += len(batches)
        viol = sum(o[0] for o in part)
        j = min(range(len(part)), key=lambda t: part[t][1])
        results.append(InequalityResult(name, sum(b[5] for b in batches), viol,
                                        part[j][1], part[j][2]))
    return AlgebraReport(seed, results)
