"""Local polynomial-reproducing coefficient kernels and the exchange functional.

A coefficient row ``a(., alpha)`` is supported on the centers inside the cap
``C(alpha, rho)`` and reproduces point evaluation at ``alpha`` on all
spherical polynomials of degree ``<= L``.  Rows are computed by a minimal
norm solve (l2 via SVD, or l1 via linear programming).

Reproduction is imposed in a local basis of ``Pi_L``.  With ``(u, v, w)``
coordinates in a frame whose pole is ``alpha`` and ``eta = 1 - w``, the
functions ``u^a v^b`` (``a + b <= L``) and ``eta^(L-j) u^a v^b``
(``a + b = j < L``) span ``Pi_L`` restricted to the sphere.  Near the pole
their lowest-order Taylor terms are distinct (orders ``0..L`` and
``L+1..2L``), so after scaling ``u, v`` by the cap size and ``eta`` by its
square the system stays well conditioned in small caps.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.special import roots_legendre

from .harmonics import SphericalHarmonicBasis
from .sphere_geom import PointSet, QuadratureRule, geodesic_dist, rotation_to_north


class CKCError(RuntimeError):
    """Row construction failed; ``node`` is the index of the anchor when known."""

    def __init__(self, msg: str, node: int | None = None):
        super().__init__(msg if node is None else f"node {node}: {msg}")
        self.node = node


class InsufficientDensityError(CKCError):
    pass


class DegenerateGeometryError(CKCError):
    pass


SOLVERS = ("min_l2", "min_l1")
POLICIES = ("fixed", "paper", "adaptive")


@dataclass(frozen=True)
class CKCConfig:
    """Precision ``L``, radius policy and solver for coefficient rows.

    ``paper`` uses ``rho = c L^2 h``; ``fixed`` uses ``rho``; ``adaptive``
    starts from ``c L^2 h`` (or ``rho``) and doubles until the smallest
    singular value of the row-normalized system exceeds ``tau``.
    """

    L: int
    radius_policy: str = "paper"
    c: float = 48.0
    rho: float | None = None
    tau: float = 1e-8
    solver: str = "min_l2"

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("precision L must be non-negative")
        if self.radius_policy not in POLICIES:
            raise ValueError(f"radius policy must be one of {POLICIES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.radius_policy == "fixed" and (self.rho is None or not 0 < self.rho <= math.pi):
            raise ValueError("fixed policy needs rho in (0, pi]")
        if self.c <= 0:
            raise ValueError("radius constant must be positive")

    @property
    def dim(self) -> int:
        return (self.L + 1) ** 2

    def initial_radius(self, h: float) -> float:
        if self.radius_policy == "fixed" or (self.radius_policy == "adaptive" and self.rho is not None):
            return min(float(self.rho), math.pi)
        return min(self.c * self.L ** 2 * h, math.pi)


def local_basis(points: np.ndarray, alpha: np.ndarray, L: int, rho: float) -> np.ndarray:
    """Scaled local basis of ``Pi_L`` at ``points`` (shape ``(dim, n)``), value ``e_0`` at alpha."""
    q = points @ rotation_to_north(alpha).T
    scale = math.sin(min(rho, math.pi / 2))
    u, v, w = q[:, 0] / scale, q[:, 1] / scale, (1.0 - q[:, 2]) / scale ** 2
    rows = []
    for deg in range(L + 1):
        for i in range(deg + 1):
            rows.append(u ** (deg - i) * v ** i)
    for deg in range(L):
        for i in range(deg + 1):
            rows.append(w ** (L - deg) * u ** (deg - i) * v ** i)
    return np.array(rows).reshape(len(rows), len(points))


@dataclass
class CoefficientKernelRow:
    anchor: np.ndarray
    support: np.ndarray
    values: np.ndarray
    rho: float
    sigma_min: float = float("nan")

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self.values).sum())

    def reproduce(self, f_centers: np.ndarray) -> float:
        """``sum_xi a(xi, alpha) f(xi)`` for values given at the row's support."""
        return float(self.values @ f_centers)


def _row_system(xi: PointSet, alpha, L: int, rho: float):
    idx = xi.cap(alpha, rho)
    V = local_basis(xi.points[idx], alpha, L, rho)
    norms = np.linalg.norm(V, axis=1)
    norms[norms == 0.0] = 1.0
    return idx, V / norms[:, None], 1.0 / norms


def _solve_l1(V: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = V.shape[1]
    res = linprog(np.ones(2 * n), A_eq=np.hstack([V, -V]), b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise DegenerateGeometryError(f"l1 solve failed: {res.message}")
    return res.x[:n] - res.x[n:]


def _prepare(xi: PointSet, alpha, cfg: CKCConfig, h: float, node=None):
    """Pick the radius and gather the normalized system for one anchor."""
    rho = cfg.initial_radius(h)
    while True:
        idx, V, b = _row_system(xi, alpha, cfg.L, rho)
        enough = len(idx) >= cfg.dim
        sigma = np.linalg.svd(V, compute_uv=False)[-1] if enough else 0.0
        if enough and sigma > cfg.tau:
            return idx, V, b, rho, float(sigma)
        if cfg.radius_policy != "adaptive" or rho >= math.pi:
            if not enough:
                raise InsufficientDensityError(
                    f"{len(idx)} centers in cap of radius {rho:.4g}, need {cfg.dim}", node)
            raise DegenerateGeometryError(f"smallest singular value {sigma:.3g} <= tau={cfg.tau:g}", node)
        rho = min(2.0 * rho, math.pi)


def build_row(xi: PointSet, alpha, cfg: CKCConfig, basis: SphericalHarmonicBasis | None = None,
              node: int | None = None) -> CoefficientKernelRow:
    """Minimal-norm coefficient row at ``alpha``.

    ``basis`` only fixes the precision (``basis.L`` must equal ``cfg.L``);
    the solve itself uses the local basis spanning the same space.
    """
    if basis is not None and basis.L != cfg.L:
        raise ValueError(f"basis degree {basis.L} != precision {cfg.L}")
    if xi.d != 2:
        raise ValueError("coefficient kernels are built on S^2 only")
    alpha = np.asarray(alpha, dtype=float)
    h = xi.fill_distance_h if cfg.radius_policy != "fixed" else 0.0
    idx, V, b, rho, sigma = _prepare(xi, alpha, cfg, h, node)
    rhs = np.zeros(cfg.dim)
    rhs[0] = b[0]
    if cfg.solver == "min_l1":
        vals = _solve_l1(V, rhs)
    else:
        U, S, Wt = np.linalg.svd(V, full_matrices=False)
        vals = Wt.T @ ((U.T @ rhs) / S)
    return CoefficientKernelRow(alpha, idx, vals, rho, sigma)


@dataclass
class CoefficientKernel:
    """Rows at a set of anchors (normally quadrature nodes)."""

    anchors: np.ndarray
    rows: list
    cfg: CKCConfig
    n_centers: int
    failures: list = field(default_factory=list)

    @property
    def stability_K(self) -> float:
        return max(r.l1_norm for r in self.rows)

    @property
    def rho_used(self) -> float:
        return max(r.rho for r in self.rows)

    def matrix(self):
        """Sparse ``(n_anchors, n_centers)`` matrix of ``a(xi, alpha_q)``."""
        from scipy.sparse import csr_matrix
        indptr = np.concatenate([[0], np.cumsum([len(r.support) for r in self.rows])])
        indices = np.concatenate([r.support for r in self.rows])
        data = np.concatenate([r.values for r in self.rows])
        return csr_matrix((data, indices, indptr), shape=(len(self.rows), self.n_centers))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "center_index", "value"])
            for q, row in enumerate(self.rows):
                for i, v in zip(row.support, row.values):
                    w.writerow([q, int(i), f"{v:.17g}"])

    def summary(self) -> dict:
        return {"L": self.cfg.L, "solver": self.cfg.solver, "radius_policy": self.cfg.radius_policy,
                "c": self.cfg.c, "tau": self.cfg.tau, "n_rows": len(self.rows),
                "stability_K": self.stability_K, "rho_used": self.rho_used,
                "min_sigma": min(r.sigma_min for r in self.rows),
                "mean_support": float(np.mean([len(r.support) for r in self.rows])),
                "failures": self.failures}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _batched_l2(xi: PointSet, anchors: np.ndarray, cfg: CKCConfig, h: float, start: int):
    rows = []
    systems = [_prepare(xi, a, cfg, h, node=start + q) for q, a in enumerate(anchors)]
    # group by support size so the SVDs run as stacked batches
    by_size: dict[int, list[int]] = {}
    for q, (idx, *_rest) in enumerate(systems):
        by_size.setdefault(len(idx), []).append(q)
    vals: list = [None] * len(anchors)
    for qs in by_size.values():
        V = np.stack([systems[q][1] for q in qs])
        rhs = np.array([systems[q][2][0] for q in qs])
        U, S, Wt = np.linalg.svd(V, full_matrices=False)
        coef = U[:, 0, :] * rhs[:, None] / S
        sol = np.einsum("bkn,bk->bn", Wt, coef)
        for j, q in enumerate(qs):
            vals[q] = sol[j]
    for q, (idx, _V, _b, rho, sigma) in enumerate(systems):
        rows.append(CoefficientKernelRow(anchors[q], idx, vals[q], rho, sigma))
    return rows


def build_kernel(xi: PointSet, rule: QuadratureRule | np.ndarray, cfg: CKCConfig,
                 threads: int = 1, chunk: int = 512) -> CoefficientKernel:
    """Rows at every node of ``rule`` (or at an array of anchor points).

    Failures propagate as :class:`CKCError` naming the node index.
    """
    anchors = rule.nodes if isinstance(rule, QuadratureRule) else np.atleast_2d(np.asarray(rule, float))
    if xi.d != 2:
        raise ValueError("coefficient kernels are built on S^2 only")
    h = xi.fill_distance_h if cfg.radius_policy != "fixed" else 0.0
    starts = list(range(0, len(anchors), chunk))
    if cfg.solver == "min_l1":
        def work(s):
            return [build_row(xi, a, cfg, node=s + q) for q, a in enumerate(anchors[s:s + chunk])]
    else:
        def work(s):
            return _batched_l2(xi, anchors[s:s + chunk], cfg, h, s)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    rows = [r for part in parts for r in part]
    return CoefficientKernel(anchors, rows, cfg, len(xi))


# --------------------------------------------------------------------------
# Exchange functional
# --------------------------------------------------------------------------

def _kernel_values(k, t):
    return np.asarray(k(np.clip(t, -1.0, 1.0)), dtype=float)


def exchange_eval(k, ck: CoefficientKernel, x, q: int, centers: np.ndarray) -> np.ndarray:
    """``|k(x . alpha_q) - sum_xi a(xi, alpha_q) k(x . xi)|`` for points ``x``.

    ``k`` is any callable of ``t`` (a :class:`ZonalKernel` or a closed form).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    row = ck.rows[q]
    direct = _kernel_values(k, x @ row.anchor)
    local = _kernel_values(k, x @ centers[row.support].T) @ row.values
    out = np.abs(direct - local)
    return float(out[0]) if out.shape == (1,) else out


def polar_rule(alpha, rho: float, n_az: int = 96, n_gl: int = 8, n_inner: int = 8, ratio: float = 1.5):
    """Quadrature on S^2 in polar coordinates centred at ``alpha``.

    Uniform Gauss-Legendre panels on ``[0, 2 rho]`` and geometrically growing
    panels beyond, so the cap where the exchange lives is finely resolved.
    Returns nodes, weights and the polar angle of each node.
    """
    edges = list(np.linspace(0.0, min(2.0 * rho, math.pi), n_inner + 1))
    width = edges[-1] - edges[-2]
    while edges[-1] < math.pi:
        width *= ratio
        edges.append(min(edges[-1] + width, math.pi))
    x, w = roots_legendre(n_gl)
    thetas, wt = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = (b - a) / 2
        thetas.append(a + (x + 1.0) * half)
        wt.append(w * half)
    theta = np.concatenate(thetas)
    w_theta = np.concatenate(wt) * np.sin(theta)
    phi = (np.arange(n_az) + 0.5) * (2.0 * math.pi / n_az)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    local = np.column_stack([(np.sin(th) * np.cos(ph)).ravel(), (np.sin(th) * np.sin(ph)).ravel(),
                             np.cos(th).ravel()])
    nodes = local @ rotation_to_north(alpha)
    weights = np.repeat(w_theta * (2.0 * math.pi / n_az), n_az)
    return nodes, weights, th.ravel()


def sample_nodes(ck: CoefficientKernel, n_sample: int) -> np.ndarray:
    """Evenly spread row indices, deterministic."""
    n = len(ck.rows)
    return np.unique(np.linspace(0, n - 1, min(n_sample, n)).round().astype(int))


def exchange_norm_estimate(k, ck: CoefficientKernel, centers: np.ndarray,
                           rule: QuadratureRule | None = None, n_sample: int = 16) -> float:
    """``max_alpha int |e_k(x, alpha)| dx`` over sampled rows.

    The x-integral uses ``rule`` if given, otherwise a polar rule centred at
    each anchor.
    """
    best = 0.0
    for q in sample_nodes(ck, n_sample):
        if rule is None:
            nodes, weights, _ = polar_rule(ck.rows[q].anchor, ck.rows[q].rho)
        else:
            nodes, weights = rule.nodes, rule.weights
        best = max(best, float(weights @ exchange_eval(k, ck, nodes, int(q), centers)))
    return best


def exchange_decay_profile(k, ck: CoefficientKernel, q: int, centers: np.ndarray, radii,
                           n_az: int = 256, n_per: int = 8) -> dict:
    """Annulus maxima of the exchange around ``alpha_q`` and their log-log slope.

    The slope is fitted against ``1 + dist / rho`` at the annulus midpoints.
    """
    radii = np.asarray(radii, dtype=float)
    row = ck.rows[q]
    rho = row.rho
    if len(radii) < 3:
        raise ValueError("need at least three radii")
    R = rotation_to_north(row.anchor)
    maxima, mids = [], []
    phi = (np.arange(n_az) + 0.5) * (2.0 * math.pi / n_az)
    for a, b in zip(radii[:-1], radii[1:]):
        th = np.linspace(a, b, n_per)
        tt, pp = np.meshgrid(th, phi, indexing="ij")
        local = np.column_stack([(np.sin(tt) * np.cos(pp)).ravel(), (np.sin(tt) * np.sin(pp)).ravel(),
                                 np.cos(tt).ravel()])
        maxima.append(float(np.max(exchange_eval(k, ck, local @ R, q, centers))))
        mids.append(0.5 * (a + b))
    maxima, mids = np.array(maxima), np.array(mids)
    if np.all(maxima < 1e-14):
        raise ValueError("exchange below 1e-14 everywhere; profile is vacuous")
    slope = float(np.polyfit(np.log1p(mids / rho), np.log(maxima), 1)[0])
    return {"rho": rho, "mids": mids.tolist(), "maxima": maxima.tolist(), "slope": slope}


def near_field_max(k, ck: CoefficientKernel, q: int, centers: np.ndarray, n: int = 4000) -> float:
    """Max exchange over the cap ``dist(x, alpha_q) <= rho`` on a polar sample."""
    row = ck.rows[q]
    nodes, _, theta = polar_rule(row.anchor, row.rho / 2.0, n_az=64, n_gl=8, n_inner=8)
    inside = theta <= row.rho
    return float(np.max(exchange_eval(k, ck, nodes[inside], q, centers)))


def reproduction_residual(row: CoefficientKernelRow, centers: np.ndarray, coeffs: np.ndarray,
                          basis: SphericalHarmonicBasis) -> tuple[float, float]:
    """Residual ``|sum a S(xi) - S(alpha)|`` for ``S = sum coeffs Y`` and ``||S||_inf`` on the cap."""
    vals = basis.eval(centers[row.support]) @ coeffs
    at_alpha = float(np.ravel(basis.eval(row.anchor) @ coeffs)[0])
    sup = max(float(np.max(np.abs(vals))) if len(vals) else 0.0, abs(at_alpha))
    return abs(float(row.values @ vals) - at_alpha), sup


def support_within_cap(row: CoefficientKernelRow, centers: np.ndarray) -> bool:
    if len(row.support) == 0:
        return True
    return bool(np.all(geodesic_dist(centers[row.support], row.anchor) <= row.rho))
