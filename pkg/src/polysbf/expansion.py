"""Expansion of polyharmonic kernels in shifted surface splines.

With ``lbar = l + lam_d`` and ``u = lbar^-2`` both coefficient laws are
power series in ``u``:

    G_hat(l)       = lbar^(-2m)        * (1 + A_1 u + A_2 u^2 + ...)
    phi_hat_{s+j}  = C_{s+j} lbar^(-2(m+j)) * (1 + B^(j)_1 u + ...)

Matching coefficients of ``u^0 .. u^(J-1)`` gives ``G = sum_j gamma_j
phi_{s+j} + R_J`` with a remainder whose coefficients decay like
``lbar^(-2(m+J))``. All series arithmetic is done in exact rationals.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import CubicSpline

from .zonal_kernels import (KernelError, PolyharmonicKernel, SurfaceSpline, ZonalKernel,
                            calibrate_Cs, kernel_eval, smoothness_order, surface_spline_eval)

_CALIBRATION_CACHE: dict[tuple[Fraction, int], tuple[float, np.ndarray]] = {}


def calibrated_spline(s, d: int) -> SurfaceSpline:
    """Surface spline with ``C_s`` calibrated once per ``(s, d)`` and cached.

    Caching keeps every downstream float identical across calls, which the
    triangular structure of the gamma recursion relies on.
    """
    ss = SurfaceSpline(Fraction(s), d)
    key = (ss.s, d)
    if key not in _CALIBRATION_CACHE:
        calibrate_Cs(ss)
        _CALIBRATION_CACHE[key] = (ss.C_s, ss.low_coeffs)
    ss.C_s, ss.low_coeffs = _CALIBRATION_CACHE[key]
    return ss


def _rational(x) -> Fraction:
    return Fraction(x).limit_denominator(10 ** 12)


def _geometric_product(ratios, N_terms: int) -> list[Fraction]:
    """Coefficients of ``prod_j (1 - a_j u)^-1`` up to ``u^N_terms``."""
    out = [Fraction(1)] + [Fraction(0)] * N_terms
    for a in ratios:
        # multiplying by 1/(1 - a u) is the running recurrence c_n += a c_{n-1}
        for n in range(1, N_terms + 1):
            out[n] += a * out[n - 1]
    return out


def neumann_product(roots, lam_d, N_terms: int) -> list[Fraction]:
    """Series ``A_0 = 1, A_1, ..., A_N`` of ``prod_j (1 - (lam_d^2 + r_j) u)^-1``."""
    if N_terms < 1:
        raise ValueError("N_terms must be >= 1")
    lam = _rational(lam_d)
    return _geometric_product([lam * lam + _rational(r) for r in roots], N_terms)


def spline_neumann(s_shift, d: int, N_terms: int) -> list[Fraction]:
    """Normalized series ``1, B_1, ..., B_N`` of ``prod_{nu=1}^{m'} (1 - (nu - 1/2)^2 u)^-1``.

    ``m' = s_shift + d/2`` must be an integer.
    """
    m_shift = Fraction(s_shift) + Fraction(d, 2)
    if m_shift.denominator != 1:
        raise KernelError(f"s + d/2 must be an integer, got {m_shift}")
    if N_terms < 1:
        raise ValueError("N_terms must be >= 1")
    return _geometric_product([(Fraction(2 * nu - 1, 2)) ** 2 for nu in range(1, int(m_shift) + 1)],
                              N_terms)


@dataclass
class ExpansionResult:
    kernel: PolyharmonicKernel
    J: int
    products: list            # exact c_j = gamma_j * C_{s+j}
    gammas: list
    splines: list = field(repr=False)
    fit_window: tuple = (0, 0)
    fitted_decay: float = float("nan")
    _remainder_zonal: ZonalKernel | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.kernel.d

    def remainder_exact(self, ell: int) -> Fraction | None:
        """Exact ``R_J(l)`` where all spline laws hold, else ``None``."""
        if any(ell < ss.law_start for ss in self.splines):
            return None
        lbar = ell + Fraction(self.d - 1, 2)
        out = self.kernel.coeff_exact(ell)
        for c, ss in zip(self.products, self.splines):
            prod = Fraction(1)
            for nu in range(1, ss.m + 1):
                prod *= lbar * lbar - Fraction(2 * nu - 1, 2) ** 2
            out -= c / prod
        return out

    def remainder_law(self, ell: int) -> float:
        """``R_J(l) = G_hat(l) - sum_j gamma_j phi_hat_{s+j}(l)``."""
        exact = self.remainder_exact(ell)
        if exact is not None:
            return float(exact)
        return self.kernel.coeff(ell) - sum(g * ss.coeff(ell) for g, ss in zip(self.gammas, self.splines))

    def remainder_kernel(self) -> ZonalKernel:
        if self._remainder_zonal is None:
            self._remainder_zonal = ZonalKernel(self.d, self.remainder_law, float(2 * (self.kernel.m + self.J)),
                                                name=f"remainder(J={self.J})")
        return self._remainder_zonal

    def evaluator(self, n_table: int = 8193, tol: float = 1e-13) -> "KernelEvaluator":
        return KernelEvaluator(self, n_table=n_table, tol=tol)

    def to_json(self) -> str:
        return json.dumps({
            "kernel": {"type": "polyharmonic", "d": self.d, "m": self.kernel.m, "roots": list(self.kernel.roots)},
            "J": self.J,
            "gammas": [float(g) for g in self.gammas],
            "C": [ss.C_s for ss in self.splines],
            "fit_window": list(self.fit_window),
            "fitted_decay": self.fitted_decay,
        }, indent=2)


def validity_threshold(roots) -> int:
    return int(math.ceil(max((math.sqrt(abs(r)) for r in roots), default=0.0))) + 1


def match_gammas(k: PolyharmonicKernel, J: int, fit: bool = True) -> ExpansionResult:
    """Choose ``gamma_0 .. gamma_{J-1}`` so the first J orders of ``G_hat`` cancel.

    ``c_j = A_j - sum_{k<j} c_k B^(k)_{j-k}`` and ``gamma_j = c_j / C_{s+j}``.
    The remainder decay exponent is fitted over ``l in [4 l*, 40 l*]``.
    """
    if J < 0:
        raise ValueError("J must be non-negative")
    N_terms = 2 * J + 8
    lam = Fraction(k.d - 1, 2)
    A = neumann_product(k.roots, lam, N_terms)
    splines, products, gammas = [], [], []
    for j in range(J):
        ss = calibrated_spline(k.s + j, k.d)
        if ss.C_s == 0.0:
            raise KernelError(f"C_(s+{j}) vanished")
        c = A[j]
        for i in range(j):
            B = spline_neumann(k.s + i, k.d, N_terms)
            c -= products[i] * B[j - i]
        splines.append(ss)
        products.append(c)
        gammas.append(float(c) / ss.C_s)
    res = ExpansionResult(k, J, products, gammas, splines)
    if fit:
        lo = 4 * validity_threshold(k.roots)
        res.fit_window = (lo, 10 * lo)
        res.fitted_decay = fit_decay(res.remainder_law, k.d, *res.fit_window)
    return res


def fit_decay(law, d: int, lo: int, hi: int) -> float:
    """Decay exponent of ``|law(l)|`` in ``lbar`` by log-log regression on ``[lo, hi]``.

    The remainders behave like ``lbar^-p (c_0 + c_1 lbar^-2 + ...)``, so the
    regression carries a ``lbar^-2`` column; without it the leading
    correction biases ``p`` upward for large J on a fixed window.
    """
    if hi - lo < 4:
        raise ValueError("fit window too short")
    ells = np.arange(lo, hi + 1)
    vals = np.abs(np.array([law(int(ell)) for ell in ells], dtype=float))
    if np.any(vals == 0.0):
        raise ValueError("remainder vanishes inside the fit window")
    lbar = ells + (d - 1) / 2
    X = np.column_stack([np.ones_like(lbar), np.log(lbar), lbar ** -2.0])
    coef = np.linalg.lstsq(X, np.log(vals), rcond=None)[0]
    return float(-coef[1])


def remainder_smoothness(res: ExpansionResult, d: int | None = None) -> int | None:
    """Smoothness certified by the fitted remainder decay (less a 0.15 safety margin)."""
    if not np.isfinite(res.fitted_decay):
        raise ValueError("no fitted decay available")
    if res.fit_window[1] - res.fit_window[0] < 4:
        raise ValueError("fit window too short")
    return smoothness_order(res.fitted_decay - 0.15, res.d if d is None else d)


def formal_remainder_series(res: ExpansionResult, N_terms: int | None = None) -> list[Fraction]:
    """Coefficients of ``u^n`` in ``lbar^(2m) (G_hat - sum_j gamma_j phi_hat_{s+j})``, exact."""
    N = 2 * res.J + 8 if N_terms is None else N_terms
    k = res.kernel
    out = list(neumann_product(k.roots, Fraction(k.d - 1, 2), N))
    for j, c in enumerate(res.products):
        B = spline_neumann(k.s + j, k.d, N)
        for n in range(j, N + 1):
            out[n] -= c * B[n - j]
    return out


class KernelEvaluator:
    """Fast evaluation of ``G(t) = sum_j gamma_j phi_{s+j}(t) + R_J(t)``.

    The singular surface-spline terms use their closed forms; the smooth
    remainder is summed once on a Chebyshev-spaced table and interpolated by
    a cubic spline.
    """

    def __init__(self, res: ExpansionResult, n_table: int = 8193, tol: float = 1e-13):
        self.res = res
        # cosine spacing clusters nodes at both ends of [-1, 1]
        t = -np.cos(np.linspace(0.0, math.pi, n_table))
        self._spline = CubicSpline(t, kernel_eval(res.remainder_kernel(), t, tol=tol))

    def remainder(self, t) -> np.ndarray:
        return self._spline(np.clip(np.asarray(t, dtype=float), -1.0, 1.0))

    def __call__(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
        out = self.remainder(t)
        for g, ss in zip(self.res.gammas, self.res.splines):
            out = out + g * surface_spline_eval(ss, t)
        return out

    def as_kernel(self) -> ZonalKernel:
        k = self.res.kernel
        return ZonalKernel(k.d, k.coeff, float(2 * k.m), closed_form=self, excluded=k.excluded_J,
                           name=f"polyharmonic(m={k.m}, roots={list(k.roots)}, d={k.d})")
