"""Quasi-interpolation with polyharmonic kernels and convergence studies.

For a kernel ``G`` with ``L_2m G = delta`` off the degrees ``J``,

    T f(x) = p_f(x) + sum_xi A_xi G(x . xi),
    A_xi   = sum_q w_q [L_2m (f - p_f)](alpha_q) a(xi, alpha_q),

where ``p_f`` is the projection of ``f`` onto the degrees in ``J`` and
``a`` a coefficient kernel of precision ``2m``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ckc import CKCConfig, CKCError, CoefficientKernel, build_kernel
from .expansion import calibrated_spline, match_gammas
from .harmonics import MAX_DEGREE, HarmonicExpansion, SphericalHarmonicBasis, harmonic_dimension
from .sphere_geom import (PointSet, QuadratureRule, build_quadrature, fibonacci_points,
                          generate_points)
from .zonal_kernels import OperatorSpec, PolyharmonicKernel, surface_spline_eval

# --------------------------------------------------------------------------
# Targets
# --------------------------------------------------------------------------


@dataclass
class TargetFunction:
    """Target known by its harmonic coefficients, degree block by degree block.

    ``block(l)`` returns the ``2l + 1`` coefficients of degree ``l`` (ordered
    ``m = -l..l``); ``band_cap`` is the highest degree with nonzero
    coefficients that will ever be used.  ``closed_form``, when present,
    gives the exact values (used for errors of band-truncated targets).
    """

    block: Callable[[int], np.ndarray]
    band_cap: int
    smoothness_tag: float | str
    seed: int | None = None
    closed_form: Callable | None = None
    name: str = "target"
    _cache: dict = field(default_factory=dict, repr=False)

    def expansion(self, band: int | None = None) -> HarmonicExpansion:
        B = self.band_cap if band is None else min(band, self.band_cap)
        if B not in self._cache:
            self._cache[B] = HarmonicExpansion(np.concatenate([self.block(ell) for ell in range(B + 1)]))
        return self._cache[B]

    def eval(self, x) -> np.ndarray:
        if self.closed_form is not None:
            return self.closed_form(x)
        return self.expansion().eval(x)

    def truncation_error_l2(self, band: int) -> float:
        """L2 norm of the discarded degrees ``band < l <= band_cap``."""
        return math.sqrt(sum(float(np.sum(self.block(ell) ** 2)) for ell in range(band + 1, self.band_cap + 1)))


def band_limited_target(band: int, seed: int, decay: float = 1.0) -> TargetFunction:
    """Random Gaussian coefficients with degree weight ``(1 + l)^-decay``, unit L2 norm."""
    rng = np.random.default_rng(seed)
    raw = [rng.standard_normal(2 * ell + 1) * (1.0 + ell) ** -decay for ell in range(band + 1)]
    scale = 1.0 / math.sqrt(sum(float(np.sum(b ** 2)) for b in raw))
    return TargetFunction(lambda ell: raw[ell] * scale if ell <= band else np.zeros(2 * ell + 1),
                          band, "band-limited", seed, name=f"band_limited(B={band}, seed={seed})")


def spline_target(t, p, band_cap: int = MAX_DEGREE, d: int = 2) -> TargetFunction:
    """``phi_t(x . p)``: coefficients ``phi_hat_t(l) Y_lm(p)``; smoothness ``2t + d/2`` in the L2 scale."""
    ss = calibrated_spline(t, d)
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    basis = SphericalHarmonicBasis(band_cap)
    yp = basis.eval(p)[0]

    def block(ell):
        return ss.coeff(ell) * yp[ell * ell: (ell + 1) ** 2]

    return TargetFunction(block, band_cap, float(2 * ss.s) + d / 2,
                          closed_form=lambda x: surface_spline_eval(ss, np.asarray(x) @ p),
                          name=f"spline(t={ss.s}, p={p.tolist()})")


def random_sign_target(sigma: float, band_cap: int, seed: int, d: int = 2) -> TargetFunction:
    """``c_lm = eps_lm (1 + l)^(-sigma - d/2 - 0.01) / sqrt(N(d, l))`` with random signs."""
    rng = np.random.default_rng(seed)
    signs = [rng.choice([-1.0, 1.0], size=2 * ell + 1) for ell in range(band_cap + 1)]

    def block(ell):
        return signs[ell] * (1.0 + ell) ** (-sigma - d / 2 - 0.01) / math.sqrt(harmonic_dimension(d, ell))

    return TargetFunction(block, band_cap, float(sigma), seed, name=f"random_sign(sigma={sigma}, seed={seed})")


def expansion_target(f: HarmonicExpansion, name: str = "expansion") -> TargetFunction:
    L = f.L

    def block(ell):
        return f.coeffs[ell * ell: (ell + 1) ** 2] if ell <= L else np.zeros(2 * ell + 1)

    return TargetFunction(block, L, "band-limited", name=name)


# --------------------------------------------------------------------------
# Operators
# --------------------------------------------------------------------------

def project_pf(f: TargetFunction | HarmonicExpansion, J) -> HarmonicExpansion:
    """Projection onto the degrees in ``J`` (exact on coefficients)."""
    exp = f.expansion() if isinstance(f, TargetFunction) else f
    return exp.restrict(sorted(J))


def apply_L2m(f: TargetFunction | HarmonicExpansion, op: OperatorSpec, band: int | None = None) -> HarmonicExpansion:
    """Symbol multiplication ``c_lm -> prod_j (nu_l - r_j) c_lm`` on the band-limited part."""
    exp = f.expansion(band) if isinstance(f, TargetFunction) else f
    return exp.multiply_symbol(op.symbol)


class KernelSum:
    """Blocked evaluation of ``sum_xi A_xi k(x . xi)`` for one or more coefficient vectors."""

    def __init__(self, kernel: Callable, centers: np.ndarray, block: int = 1024):
        self.kernel = kernel
        self.centers = np.asarray(centers, dtype=float)
        self.block = block

    def __call__(self, coeffs: np.ndarray, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        coeffs = np.asarray(coeffs, dtype=float)
        out = np.empty((len(x),) + coeffs.shape[1:])
        for s in range(0, len(x), self.block):
            K = self.kernel(np.clip(x[s:s + self.block] @ self.centers.T, -1.0, 1.0))
            out[s:s + self.block] = K @ coeffs
        return out


@dataclass
class Approximant:
    centers: np.ndarray
    coeffs: np.ndarray
    polynomial_part: HarmonicExpansion
    kernel: Callable
    kernel_spec: dict = field(default_factory=dict)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = KernelSum(self.kernel, self.centers)(self.coeffs, x)
        if np.any(self.polynomial_part.coeffs):
            out = out + self.polynomial_part.eval(x)
        return out

    @property
    def l1_coeff_norm(self) -> float:
        return float(np.abs(self.coeffs).sum())

    def to_json(self) -> str:
        return json.dumps({"kernel": self.kernel_spec, "centers": np.asarray(self.centers).tolist(),
                           "coefficients": self.coeffs.tolist(),
                           "polynomial_part": json.loads(self.polynomial_part.to_json())})


def _rule_matches(ck: CoefficientKernel, rule: QuadratureRule) -> bool:
    return ck.anchors.shape == rule.nodes.shape and np.array_equal(ck.anchors, rule.nodes)


def density_coefficients(g: HarmonicExpansion, ck: CoefficientKernel, rule: QuadratureRule) -> np.ndarray:
    """``A_xi = sum_q w_q g(alpha_q) a(xi, alpha_q)``."""
    if not _rule_matches(ck, rule):
        raise ValueError("coefficient kernel rows must sit at the quadrature nodes")
    gq = g.eval(rule.nodes) if np.any(g.coeffs) else np.zeros(len(rule))
    return ck.matrix().T @ (rule.weights * gq)


def build_approximant(f: TargetFunction, k: PolyharmonicKernel, xi: PointSet, ck: CoefficientKernel,
                      rule: QuadratureRule, kernel_eval: Callable | None = None,
                      band: int | None = None) -> Approximant:
    """Quasi-interpolant of ``f`` (truncated at ``band``) from a coefficient kernel of precision 2m."""
    if ck.cfg.L != 2 * k.m:
        raise ValueError(f"coefficient kernel precision {ck.cfg.L} != 2m = {2 * k.m}")
    if kernel_eval is None:
        kernel_eval = match_gammas(k, 5, fit=False).evaluator()
    fb = f.expansion(band)
    pf = fb.restrict(sorted(k.excluded_J))
    g = (fb - pf).multiply_symbol(k.operator.symbol)
    A = density_coefficients(g, ck, rule)
    spec = {"type": "polyharmonic", "d": k.d, "m": k.m, "roots": list(k.roots)}
    return Approximant(xi.points, A, pf, kernel_eval, spec)


# --------------------------------------------------------------------------
# Errors and rates
# --------------------------------------------------------------------------

@dataclass
class ErrorReport:
    norms: dict
    h: float
    l1_coeff_norm: float
    runtime: float = 0.0

    def as_row(self, N: int) -> dict:
        return {"N": N, "h": self.h, "L1": self.norms[1], "L2": self.norms[2], "Linf": self.norms["inf"],
                "l1_coeff_norm": self.l1_coeff_norm}


def error_norms(f: TargetFunction, A: Approximant, rule: QuadratureRule, dense_grid: PointSet | np.ndarray,
                h: float = float("nan"), reference: Callable | None = None) -> ErrorReport:
    """L1 and L2 errors by quadrature, L_inf as the max over ``dense_grid``."""
    t0 = time.perf_counter()
    ref = f.eval if reference is None else reference
    grid = dense_grid.points if isinstance(dense_grid, PointSet) else np.asarray(dense_grid)
    if len(grid) < 4 * len(A.centers):
        raise ValueError("dense grid must have at least 4 points per center")
    e_q = np.abs(ref(rule.nodes) - A.evaluate(rule.nodes))
    e_g = np.abs(ref(grid) - A.evaluate(grid))
    norms = {1: float(rule.weights @ e_q), 2: float(math.sqrt(rule.weights @ e_q ** 2)),
             "inf": float(max(e_g.max(), e_q.max()))}
    return ErrorReport(norms, h, A.l1_coeff_norm, time.perf_counter() - t0)


def fit_rate(h, err) -> tuple[float, float]:
    """Least-squares slope of ``log err`` against ``log h`` and the max residual."""
    lh, le = np.log(np.asarray(h, float)), np.log(np.asarray(err, float))
    coef = np.polyfit(lh, le, 1)
    resid = float(np.max(np.abs(le - np.polyval(coef, lh))))
    return float(coef[0]), resid


@dataclass
class StudySettings:
    """Discretization choices of a convergence study, all scaled by the measured h.

    quad_spacing
        target node spacing of the product rule for the alpha-integral, in
        units of h (degree ``ceil(2 pi / (quad_spacing h))``, at least
        ``2 band + 20``).
    band_factor
        rough targets are truncated at degree ``ceil(band_factor / rho)``.
    J
        number of surface-spline terms in the kernel evaluator.
    """

    quad_spacing: float = 1.0
    band_factor: float = 2.0
    J: int = 5
    point_kind: str = "fibonacci"
    seed: int | None = None
    threads: int = 1
    error_grid_factor: int = 4
    preasymptotic_residual: float = 0.3


@dataclass
class StudyResult:
    rows: dict                   # target name -> list of rate-table rows
    slopes: dict                 # target name -> {p: (slope, residual, flagged)}
    levels: list                 # per-level diagnostics
    targets: list

    def csv_text(self, name: str) -> str:
        lines = ["N,h,L1,L2,Linf,l1_coeff_norm"]
        for r in self.rows[name]:
            lines.append(",".join(str(r["N"]) if k == "N" else f"{r[k]:.17g}"
                                  for k in ("N", "h", "L1", "L2", "Linf", "l1_coeff_norm")))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"slopes": {name: {str(p): {"slope": s, "max_residual": r, "preasymptotic": flag}
                                  for p, (s, r, flag) in d.items()} for name, d in self.slopes.items()},
                "levels": self.levels, "targets": self.targets}


class LevelFailure(RuntimeError):
    def __init__(self, N: int, cause: Exception):
        super().__init__(f"level N={N} failed: {cause}")
        self.N = N
        self.cause = cause


def quadrature_degree(h: float, band: int, settings: StudySettings) -> int:
    return max(2 * band + 20, int(math.ceil(2.0 * math.pi / (settings.quad_spacing * h))))


def convergence_study(targets, k: PolyharmonicKernel, sizes, cfg: CKCConfig,
                      settings: StudySettings | None = None, log: Callable | None = None) -> StudyResult:
    """Approximate each target on a family of point sets and fit error rates in h.

    All targets at a level share the point set, the quadrature rule and the
    coefficient kernel. A level whose coefficient kernel cannot be built
    raises :class:`LevelFailure`.
    """
    settings = settings or StudySettings()
    targets = [targets] if isinstance(targets, TargetFunction) else list(targets)
    sizes = list(sizes)
    if len(sizes) < 3:
        raise ValueError("a convergence study needs at least three sizes")
    if cfg.L != 2 * k.m:
        raise ValueError(f"CKC precision {cfg.L} != 2m = {2 * k.m}")
    ev = match_gammas(k, settings.J, fit=False).evaluator()
    rows = {t.name: [] for t in targets}
    levels = []
    for N in sizes:
        t0 = time.perf_counter()
        xi = generate_points(settings.point_kind, N, seed=settings.seed)
        h = xi.fill_distance_h
        rho = cfg.initial_radius(h)
        bands = [t.band_cap if t.closed_form is None else min(t.band_cap, int(math.ceil(settings.band_factor / rho)))
                 for t in targets]
        rule = build_quadrature(2, quadrature_degree(h, max(bands), settings))
        try:
            ck = build_kernel(xi, rule, cfg, threads=settings.threads)
        except CKCError as exc:
            raise LevelFailure(N, exc) from exc
        t_ckc = time.perf_counter() - t0
        coeffs, pfs = [], []
        for t, B in zip(targets, bands):
            fb = t.expansion(B)
            pf = fb.restrict(sorted(k.excluded_J))
            g = (fb - pf).multiply_symbol(k.operator.symbol)
            coeffs.append(density_coefficients(g, ck, rule))
            pfs.append(pf)
        coeffs = np.column_stack(coeffs)
        # error evaluation: a finer product rule and a dense Fibonacci grid
        err_rule = build_quadrature(2, int(math.ceil(2.0 * math.sqrt(settings.error_grid_factor * N))) + 2)
        grid = fibonacci_points(settings.error_grid_factor * N + 1)
        ksum = KernelSum(ev, xi.points)
        approx_q = ksum(coeffs, err_rule.nodes)
        approx_g = ksum(coeffs, grid)
        for j, (t, pf) in enumerate(zip(targets, pfs)):
            aq, ag = approx_q[:, j], approx_g[:, j]
            if np.any(pf.coeffs):
                aq, ag = aq + pf.eval(err_rule.nodes), ag + pf.eval(grid)
            e_q = np.abs(t.eval(err_rule.nodes) - aq)
            e_g = np.abs(t.eval(grid) - ag)
            rep = ErrorReport({1: float(err_rule.weights @ e_q), 2: float(math.sqrt(err_rule.weights @ e_q ** 2)),
                               "inf": float(max(e_g.max(), e_q.max()))}, h, float(np.abs(coeffs[:, j]).sum()))
            rows[t.name].append(rep.as_row(N))
        levels.append({"N": N, "h": h, "rho": rho, "quad_degree": rule.exact_degree, "quad_nodes": len(rule),
                       "bands": bands, "truncation_l2": [t.truncation_error_l2(B) for t, B in zip(targets, bands)],
                       "stability_K": ck.stability_K, "ckc_seconds": t_ckc,
                       "seconds": time.perf_counter() - t0})
        if log is not None:
            log(levels[-1], {t.name: rows[t.name][-1] for t in targets})
    slopes = {}
    for t in targets:
        hs = [r["h"] for r in rows[t.name]]
        slopes[t.name] = {}
        for p, key in ((1, "L1"), (2, "L2"), ("inf", "Linf")):
            s, resid = fit_rate(hs, [r[key] for r in rows[t.name]])
            slopes[t.name][p] = (s, resid, resid > settings.preasymptotic_residual)
    return StudyResult(rows, slopes, levels, [t.name for t in targets])
