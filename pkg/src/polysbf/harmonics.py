"""Gegenbauer polynomials and real spherical harmonics on S^2.

Gegenbauer polynomials use the standard (unnormalized) convention,
``P_l^(lam)(1) = binom(l + 2 lam - 1, l)``, for which the addition theorem
reads ``sum_m Y_lm(x) Y_lm(a) = (lam + l) / (omega_d lam) P_l^(lam)(x . a)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import binom, gammaln

from .sphere_geom import QuadratureRule, as_points, sphere_volume

MAX_DEGREE = 512
_T_SLACK = 1e-12


def _check_t(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + _T_SLACK):
        raise ValueError("argument outside [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def gegenbauer_table(lam: float, max_degree: int, t) -> np.ndarray:
    """Values ``P_l^(lam)(t)`` for ``l = 0..max_degree``; shape ``(max_degree + 1, *t.shape)``."""
    if lam <= 0:
        raise ValueError("Gegenbauer index must be positive")
    if max_degree > MAX_DEGREE:
        raise ValueError(f"degree {max_degree} exceeds cap {MAX_DEGREE}")
    t = _check_t(t)
    out = np.empty((max_degree + 1,) + t.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = 2.0 * lam * t
    for n in range(2, max_degree + 1):
        out[n] = (2.0 * (n + lam - 1.0) * t * out[n - 1] - (n + 2.0 * lam - 2.0) * out[n - 2]) / n
    return out


def gegenbauer_eval(lam: float, ell: int, t):
    """Standard Gegenbauer polynomial ``P_ell^(lam)(t)`` by three-term recurrence."""
    if ell < 0:
        raise ValueError("degree must be non-negative")
    vals = gegenbauer_table(lam, ell, t)[ell]
    return float(vals) if np.ndim(vals) == 0 else vals


def gegenbauer_deriv(lam: float, ell: int, t, order: int = 1):
    """k-th derivative via ``d/dt P_{l}^(lam) = 2 lam P_{l-1}^(lam+1)`` applied k times."""
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    if ell < order:
        t = np.asarray(t, dtype=float)
        return 0.0 if t.ndim == 0 else np.zeros_like(t)
    factor = 1.0
    for i in range(order):
        factor *= 2.0 * (lam + i)
    return factor * gegenbauer_eval(lam + order, ell - order, t)


def gegenbauer_at_one(lam: float, ell: int) -> float:
    """``P_ell^(lam)(1) = binom(ell + 2 lam - 1, ell)``, also the sup norm on [-1, 1]."""
    return float(binom(ell + 2.0 * lam - 1.0, ell))


def gegenbauer_norm_sq(lam: float, ell: int) -> float:
    """Squared norm of ``P_ell^(lam)`` in ``L2([-1,1]; (1-t^2)^(lam-1/2))``."""
    log_val = (math.log(math.pi) + (1.0 - 2.0 * lam) * math.log(2.0) + gammaln(ell + 2.0 * lam)
               - gammaln(ell + 1.0) - math.log(ell + lam) - 2.0 * gammaln(lam))
    return math.exp(log_val)


def muller_legendre(d: int, ell: int, t):
    """Mueller's Legendre polynomial on S^d, normalized so that its value at 1 is 1."""
    lam = (d - 1) / 2
    return gegenbauer_eval(lam, ell, t) / gegenbauer_at_one(lam, ell)


def harmonic_dimension(d: int, ell: int) -> int:
    """Dimension ``N(d, ell)`` of degree-``ell`` spherical harmonics on S^d."""
    if d < 1 or ell < 0:
        raise ValueError("need d >= 1 and ell >= 0")
    if ell == 0:
        return 1
    return math.comb(ell + d, d) - math.comb(ell + d - 2, d)


def addition_factor(d: int, ell: int) -> float:
    """``(lam_d + ell) / (omega_d lam_d)``, the weight turning Fourier coefficients into Gegenbauer ones."""
    lam = (d - 1) / 2
    return (lam + ell) / (sphere_volume(d) * lam)


def sh_index(ell: int, m: int) -> int:
    return ell * ell + ell + m


class SphericalHarmonicBasis:
    """Real, L2-orthonormal spherical harmonics on S^2 up to degree ``L``.

    Columns are ordered by ``(ell, m)`` lexicographically with
    ``m = -ell..ell``; index ``ell^2 + ell + m``. Negative ``m`` carries the
    sine part. No Condon-Shortley phase.
    """

    d = 2

    def __init__(self, L: int):
        if L < 0 or L > MAX_DEGREE:
            raise ValueError(f"degree must lie in [0, {MAX_DEGREE}]")
        self.L = L
        self.size = (L + 1) ** 2
        # recurrence constants, keyed on (ell, m) for ell >= m + 2
        self._a = np.zeros((L + 1, L + 1))
        self._b = np.zeros((L + 1, L + 1))
        for m in range(L + 1):
            for ell in range(m + 2, L + 1):
                self._a[ell, m] = math.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m * m))
                self._b[ell, m] = math.sqrt(((ell - 1.0) ** 2 - m * m) / (4.0 * (ell - 1.0) ** 2 - 1.0))

    def degrees(self) -> np.ndarray:
        return np.repeat(np.arange(self.L + 1), 2 * np.arange(self.L + 1) + 1)

    def eval(self, x) -> np.ndarray:
        """Evaluate all harmonics: array of shape ``(n_points, (L+1)^2)``."""
        x = as_points(x)
        if x.shape[1] != 3:
            raise ValueError("spherical harmonic basis is for S^2")
        L = self.L
        z = x[:, 2]
        out = np.empty((len(x), self.size))
        cplx = np.ones(len(x), dtype=complex)
        xy = x[:, 0] + 1j * x[:, 1]
        qmm = np.full(len(x), 1.0 / math.sqrt(4.0 * math.pi))
        for m in range(L + 1):
            if m > 0:
                qmm = qmm * math.sqrt((2.0 * m + 1.0) / (2.0 * m))
                cplx = cplx * xy
            if m == 0:
                cs = np.ones(len(x))
                sn = None
            else:
                cs = math.sqrt(2.0) * cplx.real
                sn = math.sqrt(2.0) * cplx.imag
            q_prev2 = None
            q_prev = qmm
            for ell in range(m, L + 1):
                if ell == m:
                    q = qmm
                elif ell == m + 1:
                    q = math.sqrt(2.0 * m + 3.0) * z * qmm
                else:
                    q = self._a[ell, m] * (z * q_prev - self._b[ell, m] * q_prev2)
                out[:, sh_index(ell, m)] = q * cs
                if sn is not None:
                    out[:, sh_index(ell, -m)] = q * sn
                if ell > m:
                    q_prev2, q_prev = q_prev, q
                else:
                    q_prev = q
        return out


def sph_harm_eval(basis: SphericalHarmonicBasis, ell: int, m: int, x):
    """Single real spherical harmonic ``Y_{ell,m}`` at the points ``x``."""
    if not (0 <= ell <= basis.L and abs(m) <= ell):
        raise IndexError(f"harmonic index ({ell}, {m}) out of range for L={basis.L}")
    vals = basis.eval(x)[:, sh_index(ell, m)]
    return float(vals[0]) if np.ndim(x) == 1 else vals


@dataclass
class HarmonicExpansion:
    """Coefficients of a function in the real harmonic basis on S^2 (dense up to degree ``L``)."""

    coeffs: np.ndarray
    d: int = 2

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        L = math.isqrt(len(self.coeffs)) - 1
        if (L + 1) ** 2 != len(self.coeffs):
            raise ValueError("coefficient vector length must be a square")

    @property
    def L(self) -> int:
        return math.isqrt(len(self.coeffs)) - 1

    @classmethod
    def zeros(cls, L: int) -> "HarmonicExpansion":
        return cls(np.zeros((L + 1) ** 2))

    @classmethod
    def single(cls, ell: int, m: int, value: float = 1.0, L: int | None = None) -> "HarmonicExpansion":
        out = cls.zeros(ell if L is None else L)
        out.coeffs[sh_index(ell, m)] = value
        return out

    def degrees(self) -> np.ndarray:
        return np.repeat(np.arange(self.L + 1), 2 * np.arange(self.L + 1) + 1)

    def get(self, ell: int, m: int) -> float:
        if ell > self.L:
            return 0.0
        return float(self.coeffs[sh_index(ell, m)])

    def eval(self, x, basis: SphericalHarmonicBasis | None = None) -> np.ndarray:
        basis = basis if basis is not None and basis.L == self.L else SphericalHarmonicBasis(self.L)
        return basis.eval(x) @ self.coeffs

    def band(self, L: int) -> "HarmonicExpansion":
        """Truncate or zero-pad to degree ``L``."""
        out = np.zeros((L + 1) ** 2)
        n = min(len(out), len(self.coeffs))
        out[:n] = self.coeffs[:n]
        return HarmonicExpansion(out, self.d)

    def restrict(self, degrees) -> "HarmonicExpansion":
        """Keep only the listed degrees (orthogonal projection onto their span)."""
        keep = np.isin(self.degrees(), np.fromiter(degrees, dtype=int, count=-1))
        return HarmonicExpansion(np.where(keep, self.coeffs, 0.0), self.d)

    def multiply_symbol(self, symbol) -> "HarmonicExpansion":
        """Coefficient-wise ``c_lm -> symbol(l) c_lm``."""
        per_degree = np.array([symbol(ell) for ell in range(self.L + 1)], dtype=float)
        return HarmonicExpansion(self.coeffs * per_degree[self.degrees()], self.d)

    def __add__(self, other: "HarmonicExpansion") -> "HarmonicExpansion":
        L = max(self.L, other.L)
        return HarmonicExpansion(self.band(L).coeffs + other.band(L).coeffs, self.d)

    def __sub__(self, other: "HarmonicExpansion") -> "HarmonicExpansion":
        return self + other.scaled(-1.0)

    def scaled(self, a: float) -> "HarmonicExpansion":
        return HarmonicExpansion(a * self.coeffs, self.d)

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def to_json(self) -> str:
        rows = [[int(ell), int(m), float(self.coeffs[sh_index(ell, m)])]
                for ell in range(self.L + 1) for m in range(-ell, ell + 1)
                if self.coeffs[sh_index(ell, m)] != 0.0]
        return json.dumps({"d": self.d, "coeffs": rows})

    @classmethod
    def from_json(cls, text: str) -> "HarmonicExpansion":
        data = json.loads(text)
        rows = data["coeffs"]
        L = max((r[0] for r in rows), default=0)
        out = cls.zeros(L)
        for ell, m, val in rows:
            out.coeffs[sh_index(int(ell), int(m))] = val
        out.d = int(data.get("d", 2))
        return out


def project(f, basis: SphericalHarmonicBasis, rule: QuadratureRule) -> HarmonicExpansion:
    """Coefficients ``<f, Y_lm>`` computed with ``rule``.

    ``f`` maps an ``(n, 3)`` array of points to ``n`` values.
    """
    if rule.exact_degree < 2 * basis.L:
        raise ValueError(f"quadrature degree {rule.exact_degree} < 2L = {2 * basis.L}")
    vals = np.asarray(f(rule.nodes), dtype=float)
    return HarmonicExpansion(basis.eval(rule.nodes).T @ (rule.weights * vals))
