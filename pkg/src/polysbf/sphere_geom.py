"""Geometry, point sets and quadrature on the sphere.

Points are stored as ``(n, d+1)`` float arrays of unit vectors. Full support
(generation, quadrature) is for the 2-sphere; the volume constants work for
any dimension.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import roots_legendre

UNIT_TOL = 1e-12


def sphere_volume(d: int) -> float:
    """Surface volume of the unit sphere S^d in R^{d+1}."""
    return float(2.0 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2))


@dataclass(frozen=True)
class SphereConstants:
    d: int
    lambda_d: float
    omega_d: float

    @classmethod
    def for_dim(cls, d: int) -> "SphereConstants":
        if d < 2:
            raise ValueError(f"kernel constants need d >= 2, got {d}")
        return cls(d=d, lambda_d=(d - 1) / 2, omega_d=sphere_volume(d))


def as_points(x) -> np.ndarray:
    """Return ``x`` as a 2-D array of unit vectors, validating the norms."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[1] < 2:
        raise ValueError("points need at least two coordinates")
    norms = np.linalg.norm(pts, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise ValueError("points must be unit vectors")
    return pts


def normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def geodesic_dist(x, y) -> np.ndarray | float:
    """Great-circle distance ``arccos(x . y)`` in radians.

    Accepts single points or broadcastable arrays of points. Uses the
    ``atan2`` form, which stays accurate for nearly equal and nearly
    antipodal pairs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    dot = np.sum(x * y, axis=-1)
    cross = np.linalg.norm(x - y * dot[..., None], axis=-1) if x.shape[-1] != 3 \
        else np.linalg.norm(np.cross(x, y), axis=-1)
    out = np.arctan2(cross, dot)
    return float(out) if out.ndim == 0 else out


def chord_to_geodesic(c: np.ndarray) -> np.ndarray:
    return 2.0 * np.arcsin(np.clip(np.asarray(c) / 2.0, 0.0, 1.0))


def geodesic_to_chord(r: float) -> float:
    return 2.0 * math.sin(min(r, math.pi) / 2.0)


@dataclass
class PointSet:
    """Finite set of centers on S^d with lazily computed density measures."""

    points: np.ndarray
    _h: float | None = field(default=None, repr=False)
    _h_spacing: float | None = field(default=None, repr=False)
    _sep: float | None = field(default=None, repr=False)
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = as_points(self.points)
        if len(self.points) == 0:
            raise ValueError("empty point set")
        self.points.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1] - 1

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    @property
    def fill_distance_h(self) -> float:
        if self._h is None:
            self._h, self._h_spacing = fill_distance_with_spacing(self)
        return self._h

    @property
    def separation(self) -> float:
        """Minimal pairwise geodesic distance (pi for a single point)."""
        if self._sep is None:
            if len(self) == 1:
                self._sep = math.pi
            else:
                dist, _ = self.tree.query(self.points, k=2)
                self._sep = float(chord_to_geodesic(dist[:, 1]).min())
        return self._sep

    def cap(self, alpha: np.ndarray, rho: float) -> np.ndarray:
        """Indices of centers with ``dist(xi, alpha) <= rho`` (closed cap), sorted."""
        if rho >= math.pi:
            return np.arange(len(self))
        idx = np.asarray(self.tree.query_ball_point(alpha, geodesic_to_chord(rho) * (1 + 1e-12)),
                         dtype=np.intp)
        idx.sort()
        if len(idx):
            keep = geodesic_dist(self.points[idx], alpha) <= rho
            idx = idx[keep]
        return idx


def fibonacci_points(n: int) -> np.ndarray:
    """Spherical Fibonacci lattice with ``n`` points (z-stratified, golden-angle azimuth)."""
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def fill_distance_with_spacing(xi: PointSet, resolution: int = 200_000) -> tuple[float, float]:
    """Probe-grid estimate of the fill distance and the probe spacing.

    The true value lies within one probe spacing of the returned estimate.
    """
    if resolution < 1000:
        raise ValueError("resolution must be at least 1000 probe points")
    if xi.d != 2:
        raise ValueError("probe grids are only available on S^2")
    probes = fibonacci_points(resolution)
    spacing = math.sqrt(4.0 * math.pi / resolution)
    h = 0.0
    for start in range(0, resolution, 100_000):
        dist, _ = xi.tree.query(probes[start:start + 100_000])
        h = max(h, float(chord_to_geodesic(dist).max()))
    return h, spacing


def fill_distance(xi: PointSet, resolution: int = 200_000) -> float:
    """Fill distance ``max_alpha dist(alpha, Xi)`` estimated on a Fibonacci probe grid."""
    if len(xi) == 0:
        raise ValueError("empty point set")
    h, _ = fill_distance_with_spacing(xi, resolution)
    return h


def generate_points(kind: str, n: int, d: int = 2, seed: int | None = None) -> PointSet:
    """Generate ``n`` centers on S^2.

    kind
        ``fibonacci`` (deterministic), ``uniform_random`` or ``cap_perturbed``;
        the random kinds require ``seed``. ``cap_perturbed`` moves each
        Fibonacci point to a uniformly random location within a cap of a
        quarter of the mean spacing.
    """
    if d != 2:
        raise ValueError("point generation is only supported on S^2")
    if n < 1:
        raise ValueError("need at least one point")
    if kind == "fibonacci":
        pts = fibonacci_points(n)
    elif kind in ("uniform_random", "cap_perturbed"):
        if seed is None:
            raise ValueError(f"{kind} requires a seed")
        rng = np.random.default_rng(seed)
        if kind == "uniform_random":
            pts = normalize(rng.standard_normal((n, 3)))
        else:
            base = fibonacci_points(n)
            radius = 0.25 * math.sqrt(4.0 * math.pi / n)
            tang = rng.standard_normal((n, 3))
            tang -= np.sum(tang * base, axis=1, keepdims=True) * base
            tang = normalize(tang)
            r = radius * np.sqrt(rng.uniform(size=(n, 1)))
            pts = np.cos(r) * base + np.sin(r) * tang
    else:
        raise ValueError(f"unknown point kind {kind!r}")
    return PointSet(normalize(pts))


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over the leading axis (fixed summation order)."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def rotated(self, rot: np.ndarray) -> "QuadratureRule":
        return QuadratureRule(self.nodes @ rot.T, self.weights, self.exact_degree)


def build_quadrature(d: int, exact_degree: int) -> QuadratureRule:
    """Product rule on S^2: Gauss-Legendre in ``cos(theta)`` times trapezoid in azimuth.

    Exact for all spherical harmonics of degree ``<= exact_degree``.
    """
    if d != 2:
        raise ValueError("quadrature is only implemented on S^2")
    if exact_degree < 0:
        raise ValueError("exact_degree must be non-negative")
    n_theta = exact_degree // 2 + 1
    n_phi = exact_degree + 1
    z, wz = roots_legendre(n_theta)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    r = np.sqrt(1.0 - zz * zz)
    nodes = np.column_stack([(r * np.cos(pp)).ravel(), (r * np.sin(pp)).ravel(), zz.ravel()])
    weights = np.repeat(wz * (2.0 * math.pi / n_phi), n_phi)
    return QuadratureRule(nodes, weights, exact_degree)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotation_to_north(alpha: np.ndarray) -> np.ndarray:
    """Orthogonal matrix whose last row is ``alpha`` (maps ``alpha`` to e3)."""
    alpha = np.asarray(alpha, dtype=float)
    helper = np.eye(3)[int(np.argmin(np.abs(alpha)))]
    e1 = normalize(helper - alpha * (helper @ alpha))
    e2 = np.cross(alpha, e1)
    return np.vstack([e1, e2, alpha])


def write_points_csv(path: str | Path, points: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in np.asarray(points):
            w.writerow([f"{v:.17g}" for v in p])


def read_points_csv(path: str | Path) -> PointSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    return PointSet(pts)


def write_quadrature_csv(path: str | Path, rule: QuadratureRule) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "w"])
        for p, wt in zip(rule.nodes, rule.weights):
            w.writerow([f"{v:.17g}" for v in (*p, wt)])


def read_quadrature_csv(path: str | Path, exact_degree: int) -> QuadratureRule:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    nodes = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    weights = np.array([float(r["w"]) for r in rows])
    return QuadratureRule(nodes, weights, exact_degree)
