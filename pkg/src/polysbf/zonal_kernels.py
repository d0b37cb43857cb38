"""Zonal kernels: surface splines and polyharmonic kernels.

A zonal kernel ``phi(x . a)`` is described by its Fourier coefficients
``phi_hat(l)``, normalized so that

    phi(t) = sum_l (lam_d + l) / (omega_d lam_d) * phi_hat(l) * P_l^(lam_d)(t),

equivalently ``phi(x . a) = sum_l phi_hat(l) sum_m Y_lm(x) Y_lm(a)``. The
Laplace-Beltrami symbol is ``nu_l = l (l + d - 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .harmonics import MAX_DEGREE, addition_factor, gegenbauer_norm_sq, gegenbauer_table
from .sphere_geom import SphereConstants


class KernelError(ValueError):
    pass


def eigenvalue(ell: int, d: int) -> int:
    return ell * (ell + d - 1)


def as_half_integer(s) -> Fraction:
    frac = Fraction(s).limit_denominator(2)
    if frac <= 0 or frac.denominator not in (1, 2) or abs(float(frac) - float(s)) > 1e-12:
        raise KernelError(f"s must be a positive half-integer, got {s}")
    return frac


# --------------------------------------------------------------------------
# Numerical Fourier-Gegenbauer coefficients
# --------------------------------------------------------------------------

def _graded_rule(d: int, n_outer: int, n_inner: int, ratio: float = 0.25, levels: int = 26,
                 L: int = 0):
    """Composite rule on [-1, 1] for the Jacobi weight ``(1 - t^2)^((d-2)/2)``.

    Panels shrink geometrically toward t = 1, where the kernels are
    singular; the two end panels absorb the weight exactly (Gauss-Jacobi).
    A panel at distance ``delta`` from 1 spans an angle of about
    ``sqrt(delta)``, so it gets extra nodes to resolve ``P_L`` there.
    Returns nodes and weights including the Jacobi weight.
    """
    beta = (d - 2) / 2
    nodes, weights = [], []
    # left panel [-1, 1 - 2 ratio] with (1 + t)^beta absorbed
    a, b = -1.0, 1.0 - 2.0 * ratio
    x, w = roots_jacobi(n_outer, 0.0, beta) if beta else roots_legendre(n_outer)
    half = (b - a) / 2
    t = a + (x + 1.0) * half
    nodes.append(t)
    weights.append(w * half ** (1.0 + beta) * (1.0 - t) ** beta)
    for k in range(1, levels):
        a, b = 1.0 - 2.0 * ratio ** k, 1.0 - 2.0 * ratio ** (k + 1)
        xg, wg = roots_legendre(n_inner + int(math.ceil(0.5 * L * math.sqrt(2.0 * ratio ** k))))
        half = (b - a) / 2
        t = a + (xg + 1.0) * half
        nodes.append(t)
        weights.append(wg * half * ((1.0 - t) * (1.0 + t)) ** beta)
    # right panel [1 - 2 ratio^levels, 1] with (1 - t)^beta absorbed
    a, b = 1.0 - 2.0 * ratio ** levels, 1.0
    x, w = roots_jacobi(n_inner, beta, 0.0) if beta else roots_legendre(n_inner)
    half = (b - a) / 2
    t = a + (x + 1.0) * half
    nodes.append(t)
    weights.append(w * half ** (1.0 + beta) * (1.0 + t) ** beta)
    return np.concatenate(nodes), np.concatenate(weights)


def _coeffs_on_rule(phi: Callable, d: int, L_max: int, nodes, weights):
    """Coefficients and a per-degree roundoff scale ``sum |w phi P_l|`` (same normalization)."""
    lam = (d - 1) / 2
    omega = SphereConstants.for_dim(d).omega_d
    table = gegenbauer_table(lam, L_max, nodes)
    wv = weights * np.asarray(phi(nodes), dtype=float)
    raw = table @ wv
    mag = np.abs(table) @ np.abs(wv)
    norm = np.array([omega * lam / (lam + ell) / gegenbauer_norm_sq(lam, ell)
                     for ell in range(L_max + 1)])
    return norm * raw, norm * mag


def gegenbauer_coeffs_numeric(phi: Callable, d: int, L_max: int, tol: float = 1e-9,
                              max_doublings: int = 3) -> np.ndarray:
    """Fourier coefficients ``phi_hat(0..L_max)`` of a zonal function by quadrature.

    Uses a Gauss-Jacobi / graded Gauss-Legendre composite rule (endpoint
    singularities such as ``(1-t)^s log(1-t)`` are resolved by the geometric
    grading). The node count is doubled until two successive estimates agree
    to ``tol`` relative to each coefficient, up to an absolute floor at the
    roundoff level of the quadrature sum (about ``eps l^2`` times its magnitude); otherwise ``KernelError`` is raised.
    """
    if d < 2:
        raise KernelError("coefficients need d >= 2")
    if L_max > MAX_DEGREE:
        raise KernelError(f"L_max {L_max} exceeds cap {MAX_DEGREE}")
    n_outer, n_inner = L_max // 2 + 24, 16
    prev, _ = _coeffs_on_rule(phi, d, L_max, *_graded_rule(d, n_outer, n_inner, L=L_max))
    for _ in range(max_doublings):
        n_outer, n_inner = 2 * n_outer, 2 * n_inner
        rule = _graded_rule(d, n_outer, n_inner, L=L_max)
        cur, mag = _coeffs_on_rule(phi, d, L_max, *rule)
        # summation error grows like sqrt(n); node errors of size eps get
        # amplified by |P_l'| ~ l^2
        floor = 8.0 * np.finfo(float).eps * (math.sqrt(len(rule[0])) + (np.arange(L_max + 1) + 1.0) ** 2)
        if np.all(np.abs(cur - prev) <= tol * np.abs(cur) + floor * mag):
            return cur
        prev = cur
    raise KernelError("coefficient quadrature did not converge under node doubling")


def series_eval(coeffs: np.ndarray, d: int, t) -> np.ndarray:
    """Evaluate ``sum_l addition_factor(d, l) coeffs[l] P_l^(lam_d)(t)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    lam = (d - 1) / 2
    L = len(coeffs) - 1
    weights = np.array([addition_factor(d, ell) for ell in range(L + 1)]) * coeffs
    t = np.asarray(t, dtype=float)
    return np.tensordot(weights, gegenbauer_table(lam, L, t), axes=(0, 0))


# --------------------------------------------------------------------------
# Generic zonal kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ZonalKernel:
    """A zonal kernel known through its coefficient law.

    ``tail_exponent`` is the decay rate ``phi_hat(l) = O(l^-tail_exponent)``;
    ``closed_form``, when given, is used for evaluation. Degrees in
    ``excluded`` carry coefficient zero.
    """

    d: int
    coeff_law: Callable[[int], float]
    tail_exponent: float
    closed_form: Callable | None = None
    excluded: frozenset = frozenset()
    name: str = "zonal"

    def coeff(self, ell: int) -> float:
        return 0.0 if ell in self.excluded else float(self.coeff_law(ell))

    def coeffs(self, L: int) -> np.ndarray:
        return np.array([self.coeff(ell) for ell in range(L + 1)])

    def __call__(self, t) -> np.ndarray:
        return kernel_eval(self, t)


def kernel_eval(k: ZonalKernel, t, tol: float = 1e-10) -> np.ndarray:
    """Evaluate a zonal kernel at ``t``: closed form if known, else a truncated series.

    The truncation degree is the smallest one for which the estimated tail
    ``sum_{l > L} |phi_hat(l)| N(d, l) / omega_d`` (extrapolated from the
    coefficient decay) drops below ``tol``.
    """
    if k.closed_form is not None:
        return k.closed_form(t)
    if k.tail_exponent <= k.d:
        raise KernelError("series does not converge absolutely (tail_exponent <= d)")
    L = 16
    while True:
        coeffs = k.coeffs(L)
        if not np.any(coeffs):
            return np.zeros_like(np.asarray(t, dtype=float))
        if _tail_bound(k, coeffs) < tol:
            return series_eval(coeffs, k.d, t)
        if L >= MAX_DEGREE:
            raise KernelError(f"tolerance {tol:g} not reachable within degree cap {MAX_DEGREE}")
        L = min(2 * L, MAX_DEGREE)


def _tail_bound(k: ZonalKernel, coeffs: np.ndarray) -> float:
    L = len(coeffs) - 1
    tail_c = max(abs(coeffs[ell]) * ell ** k.tail_exponent for ell in range(max(1, L // 2), L + 1))
    omega = SphereConstants.for_dim(k.d).omega_d
    # N(d, l) <= 2 l^{d-1} / (d-1)! for l >= 1, integral comparison for the sum
    expo = k.tail_exponent - (k.d - 1)
    return tail_c * 2.0 / math.factorial(k.d - 1) / omega * L ** (1.0 - expo) / (expo - 1.0)


def smoothness_order(k: ZonalKernel | float, d: int | None = None) -> int | None:
    """Largest ``k`` with ``sum |phi_hat(l)| l^(d + 2k - 1) < infinity`` certified by the tail law.

    Accepts a kernel, or a bare tail exponent together with ``d``. Returns
    ``None`` when even continuity is not certified.
    """
    if isinstance(k, ZonalKernel):
        tail, d = k.tail_exponent, k.d
    else:
        tail = float(k)
        if d is None:
            raise TypeError("d is required with a bare tail exponent")
    if tail - (d - 1) <= 1:
        return None
    # need tail - (d + 2k - 1) > 1  <=>  k < (tail - d) / 2
    return int(math.ceil((tail - d) / 2.0)) - 1


# --------------------------------------------------------------------------
# Surface splines
# --------------------------------------------------------------------------

@dataclass
class SurfaceSpline:
    """Restricted surface spline ``(1-t)^s log(1-t)`` (integer s) or ``(1-t)^s`` (half-integer s).

    Requires ``m = s + d/2`` to be an integer, which forces the log branch
    exactly when ``d`` is even. ``C_s`` and the low-degree coefficients are
    filled in by :func:`calibrate_Cs`.
    """

    s: Fraction
    d: int
    C_s: float | None = None
    low_coeffs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.s = as_half_integer(self.s)
        m = self.s + Fraction(self.d, 2)
        if m.denominator != 1:
            raise KernelError(f"s + d/2 must be an integer (s={self.s}, d={self.d})")
        if self.d < 2:
            raise KernelError("surface splines need d >= 2")

    @property
    def m(self) -> int:
        return int(self.s + Fraction(self.d, 2))

    @property
    def branch(self) -> str:
        return "log" if self.s.denominator == 1 else "power"

    @property
    def law_start(self) -> int:
        """First degree from which the closed coefficient law holds."""
        return int(math.floor(self.s)) + 1 if self.d % 2 == 0 else 0

    def shifted(self, j: int) -> "SurfaceSpline":
        return SurfaceSpline(self.s + j, self.d)

    def eval(self, t):
        return surface_spline_eval(self, t)

    def law_factor(self, ell: int) -> float:
        """``prod_{nu=1}^m [lbar^2 - (nu - 1/2)^2]^{-1}`` with ``lbar = ell + lam_d``."""
        lbar = ell + (self.d - 1) / 2
        prod = 1.0
        for nu in range(1, self.m + 1):
            prod *= lbar * lbar - (nu - 0.5) ** 2
        return 1.0 / prod

    def coeff(self, ell: int) -> float:
        if self.C_s is None:
            raise KernelError("surface spline is not calibrated")
        if ell < self.law_start:
            return float(self.low_coeffs[ell])
        return self.C_s * self.law_factor(ell)

    def operator(self) -> "OperatorSpec":
        """Operator of the integral identity: prod_j [Delta - (j - d/2)(j + d/2 - 1)]."""
        roots = [(j - self.d / 2) * (j + self.d / 2 - 1) for j in range(1, self.m + 1)]
        return OperatorSpec(tuple(roots), self.d)

    def as_kernel(self) -> ZonalKernel:
        return ZonalKernel(self.d, self.coeff, float(2 * self.m), closed_form=self.eval,
                           name=f"surface_spline(s={self.s}, d={self.d})")

    def green_kernel(self) -> ZonalKernel:
        """``phi_s / C_s``: the kernel whose coefficients invert :meth:`operator` off its null degrees."""
        if self.C_s is None:
            raise KernelError("surface spline is not calibrated")
        c = self.C_s
        excluded = self.operator().null_degrees(4 * self.m + 8)
        return ZonalKernel(self.d, lambda ell: self.coeff(ell) / c, float(2 * self.m),
                           closed_form=lambda t: self.eval(t) / c, excluded=frozenset(excluded),
                           name=f"surface_spline_green(s={self.s}, d={self.d})")


def surface_spline_eval(ss: SurfaceSpline, t):
    """Closed form of the surface spline; the log branch takes its limit 0 at t = 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t > 1.0 + 1e-12) or np.any(t < -1.0 - 1e-12):
        raise ValueError("argument outside [-1, 1]")
    u = np.clip(1.0 - t, 0.0, 2.0)
    s = float(ss.s)
    if ss.branch == "power":
        out = u ** s
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(u > 0.0, u ** s * np.log(np.where(u > 0.0, u, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def surface_spline_deriv(ss: SurfaceSpline, t, order: int):
    """Closed-form ``order``-th derivative in t (for t < 1).

    With ``u = 1 - t``, ``d^j/dt^j = (-1)^j d^j/du^j``; on the log branch,
    Leibniz gives ``d^j/du^j [u^s log u] = (s)_j^falling u^(s-j) log u
    + u^(s-j) sum_{i=1}^j binom(j, i) (s)_{j-i}^falling (-1)^(i-1) (i-1)!``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1.0):
        raise ValueError("derivatives are only defined for t < 1")
    u = 1.0 - t
    s = float(ss.s)

    def falling(x: float, k: int) -> float:
        out = 1.0
        for i in range(k):
            out *= x - i
        return out

    j = order
    if ss.branch == "power":
        du = falling(s, j) * u ** (s - j)
    else:
        extra = sum(math.comb(j, i) * falling(s, j - i) * (-1) ** (i - 1) * math.factorial(i - 1)
                    for i in range(1, j + 1))
        du = falling(s, j) * u ** (s - j) * np.log(u) + extra * u ** (s - j)
    out = (-1) ** j * du
    return float(out) if np.ndim(out) == 0 else out


def calibrate_Cs(ss: SurfaceSpline, ell_ref: int | None = None, L_max: int = 40,
                 tol: float = 1e-9) -> float:
    """Calibrate ``C_s`` from numerically computed coefficients; stores the result on ``ss``.

    ``C_s = phi_hat(ell_ref) / law_factor(ell_ref)``. Low-degree coefficients
    (where the law fails for even d) are stored alongside.
    """
    if ell_ref is None:
        # low degrees carry the largest coefficients, hence the best relative accuracy
        ell_ref = ss.law_start + 1
    if ell_ref < ss.law_start:
        raise KernelError(f"reference degree must be >= {ss.law_start} for d={ss.d}, s={ss.s}")
    L = max(L_max, ell_ref)
    num = gegenbauer_coeffs_numeric(ss.eval, ss.d, L, tol=tol)
    if abs(num[ell_ref]) < 1e-14:
        raise KernelError("reference coefficient is numerically zero")
    ss.C_s = float(num[ell_ref] / ss.law_factor(ell_ref))
    ss.low_coeffs = num[:max(ss.law_start, 1)].copy()
    return ss.C_s


def verify_integral_identity(ss: SurfaceSpline, L_max: int = 40, tol: float = 1e-6) -> dict:
    """Check ``phi_hat_s(l) * prod_j [nu_l - (j - d/2)(j + d/2 - 1)] == C_s`` on the valid range."""
    if ss.C_s is None:
        raise KernelError("surface spline is not calibrated")
    num = gegenbauer_coeffs_numeric(ss.eval, ss.d, L_max)
    op = ss.operator()
    ells = list(range(ss.law_start, L_max + 1))
    products = np.array([num[ell] * op.symbol(ell) for ell in ells])
    dev = np.abs(products / ss.C_s - 1.0)
    return {"ells": ells, "products": products.tolist(), "C_s": ss.C_s,
            "max_rel_deviation": float(dev.max()), "passed": bool(dev.max() <= tol)}


# --------------------------------------------------------------------------
# Polyharmonic kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorSpec:
    """``prod_j (Delta - r_j)`` acting on degree-l harmonics by ``prod_j (nu_l - r_j)``."""

    roots: tuple
    d: int

    @property
    def order(self) -> int:
        return 2 * len(self.roots)

    def symbol(self, ell: int) -> float:
        nu = eigenvalue(ell, self.d)
        return float(np.prod([nu - r for r in self.roots]))

    def null_degrees(self, max_degree: int | None = None) -> set[int]:
        """Degrees ``l`` with ``nu_l == r_j`` for some root (exact integer test)."""
        out = set()
        for r in self.roots:
            if abs(r - round(r)) > 1e-12 or r < 0:
                continue
            # solve l^2 + (d-1) l - r = 0
            disc = (self.d - 1) ** 2 + 4 * round(r)
            sq = math.isqrt(disc)
            if sq * sq == disc and (sq - (self.d - 1)) % 2 == 0:
                out.add((sq - (self.d - 1)) // 2)
        if max_degree is not None:
            out = {ell for ell in out if ell <= max_degree}
        return out


@dataclass(frozen=True)
class PolyharmonicKernel:
    """Green's function of ``(Delta - r_1) ... (Delta - r_m)`` on S^d (real roots)."""

    m: int
    roots: tuple
    d: int = 2

    def __post_init__(self):
        object.__setattr__(self, "roots", tuple(float(r) for r in self.roots))
        if len(self.roots) != self.m:
            raise KernelError(f"need {self.m} roots, got {len(self.roots)}")
        if 2 * self.m <= self.d:
            raise KernelError(f"polyharmonic kernels need m > d/2 (m={self.m}, d={self.d})")

    @property
    def s(self) -> Fraction:
        return Fraction(2 * self.m - self.d, 2)

    @property
    def operator(self) -> OperatorSpec:
        return OperatorSpec(self.roots, self.d)

    @property
    def excluded_J(self) -> frozenset:
        return frozenset(self.operator.null_degrees())

    def coeff(self, ell: int) -> float:
        return polyharmonic_coeff(self, ell)

    def coeffs(self, L: int) -> np.ndarray:
        return np.array([self.coeff(ell) for ell in range(L + 1)])

    def coeff_exact(self, ell: int) -> Fraction:
        if ell in self.excluded_J:
            return Fraction(0)
        nu = eigenvalue(ell, self.d)
        out = Fraction(1)
        for r in self.roots:
            out /= (nu - Fraction(r))
        return out

    def as_kernel(self, closed_form: Callable | None = None) -> ZonalKernel:
        return ZonalKernel(self.d, self.coeff, float(2 * self.m), closed_form=closed_form,
                           excluded=self.excluded_J,
                           name=f"polyharmonic(m={self.m}, roots={list(self.roots)}, d={self.d})")


def polyharmonic_coeff(k: PolyharmonicKernel, ell: int) -> float:
    """``prod_j [l(l+d-1) - r_j]^{-1}``; zero on the singular degrees (pseudo-inverse convention)."""
    if ell < 0:
        raise ValueError("degree must be non-negative")
    if ell in k.excluded_J:
        return 0.0
    nu = eigenvalue(ell, k.d)
    out = 1.0
    for r in k.roots:
        out /= nu - r
    return out


def kernel_from_spec(spec: dict):
    """Build a kernel object from its JSON description (see the CLI docs)."""
    allowed = {"polyharmonic": {"type", "d", "m", "roots"}, "surface_spline": {"type", "d", "s"}}
    kind = spec.get("type")
    if kind not in allowed:
        raise KernelError(f"unknown kernel type {kind!r}")
    unknown = set(spec) - allowed[kind]
    if unknown:
        raise KernelError(f"unknown kernel keys: {sorted(unknown)}")
    if kind == "polyharmonic":
        return PolyharmonicKernel(int(spec["m"]), tuple(spec["roots"]), int(spec.get("d", 2)))
    return SurfaceSpline(Fraction(spec["s"]).limit_denominator(2), int(spec.get("d", 2)))
