import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polysbf.harmonics import SphericalHarmonicBasis
from polysbf.sphere_geom import (PointSet, SphereConstants, build_quadrature, fill_distance,
                                 fill_distance_with_spacing, generate_points, geodesic_dist,
                                 read_points_csv, read_quadrature_csv, rotation_to_north,
                                 sphere_volume, write_points_csv, write_quadrature_csv)

from conftest import random_unit

E1, E2, E3 = np.eye(3)

unit_vectors = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))


def test_constants():
    c = SphereConstants.for_dim(2)
    assert abs(c.omega_d - 4 * math.pi) < 1e-12
    assert c.lambda_d == 0.5
    assert abs(sphere_volume(3) - 2 * math.pi ** 2) < 1e-12
    with pytest.raises(ValueError):
        SphereConstants.for_dim(1)


@pytest.mark.parametrize("x, y, expected", [(E1, E1, 0.0), (E1, -E1, math.pi), (E1, E2, math.pi / 2)])
def test_geodesic_examples(x, y, expected):
    assert geodesic_dist(x, y) == pytest.approx(expected, abs=1e-15)


def test_geodesic_dimension_mismatch():
    with pytest.raises(ValueError):
        geodesic_dist(E1, np.array([1.0, 0.0]))


@settings(max_examples=200, deadline=None)
@given(unit_vectors, unit_vectors, unit_vectors)
def test_geodesic_metric_properties(x, y, z):
    dxy = geodesic_dist(x, y)
    assert 0.0 <= dxy <= math.pi
    assert dxy == pytest.approx(geodesic_dist(y, x), abs=1e-14)
    assert dxy <= geodesic_dist(x, z) + geodesic_dist(z, y) + 1e-12


def test_dot_distance_bridge():
    rng = np.random.default_rng(0)
    x, z = random_unit(rng, 20000), random_unit(rng, 20000)
    dist = geodesic_dist(x, z)
    keep = dist <= math.pi / 2
    dot = np.sum(x * z, axis=1)[keep]
    r = dist[keep]
    assert keep.sum() >= 10_000
    assert np.all(1 - r ** 2 / 2 <= dot + 1e-15)
    assert np.all(dot <= 1 - 4 / math.pi ** 2 * r ** 2 + 1e-15)


def test_fill_distance_trivial_sets():
    assert fill_distance(PointSet([E3])) == pytest.approx(math.pi, abs=0.02)
    assert fill_distance(PointSet([E3, -E3])) == pytest.approx(math.pi / 2, abs=0.02)


def test_fill_distance_fibonacci_against_brute_force():
    # brute-force max-min over 10^6 random probes (seed 12345), no tree search
    oracle = 0.08509844892812095
    xi = generate_points("fibonacci", 1000)
    h, spacing = fill_distance_with_spacing(xi)
    assert abs(h - oracle) <= spacing
    assert 1.5 <= h * math.sqrt(1000) <= 4


def test_fill_distance_resolution_and_empty():
    xi = generate_points("fibonacci", 10)
    with pytest.raises(ValueError):
        fill_distance(xi, resolution=500)
    with pytest.raises(ValueError):
        PointSet(np.zeros((0, 3)))


def test_fill_distance_monotone_under_adding_points():
    rng = np.random.default_rng(1)
    base = generate_points("uniform_random", 200, seed=3).points
    extra = random_unit(rng, 50)
    h0 = fill_distance(PointSet(base), resolution=50_000)
    h1 = fill_distance(PointSet(np.vstack([base, extra])), resolution=50_000)
    assert h1 <= h0


def test_generate_points_families():
    assert len(generate_points("fibonacci", 1)) == 1
    a = generate_points("uniform_random", 100, seed=7).points
    b = generate_points("uniform_random", 100, seed=7).points
    assert np.array_equal(a, b)
    ratio = generate_points("fibonacci", 4000).fill_distance_h / generate_points("fibonacci", 1000).fill_distance_h
    assert 0.4 <= ratio <= 0.6
    with pytest.raises(ValueError):
        generate_points("fibonacci", 10, d=3)
    with pytest.raises(ValueError):
        generate_points("cap_perturbed", 10)


def test_separation_and_fill_distance_relation():
    for kind, seed in (("fibonacci", None), ("cap_perturbed", 4)):
        xi = generate_points(kind, 1000, seed=seed)
        assert 0 < xi.separation <= 2 * xi.fill_distance_h


def test_cap_is_closed_and_sorted():
    xi = generate_points("fibonacci", 500)
    alpha = xi.points[17]
    rho = float(geodesic_dist(xi.points[3], alpha))
    idx = xi.cap(alpha, rho)
    assert 3 in idx and 17 in idx
    assert np.all(np.diff(idx) > 0)
    assert np.all(geodesic_dist(xi.points[idx], alpha) <= rho)
    outside = np.setdiff1d(np.arange(500), idx)
    assert np.all(geodesic_dist(xi.points[outside], alpha) > rho)


def test_quadrature_examples():
    rule = build_quadrature(2, 40)
    assert rule.integrate(np.ones(len(rule))) == pytest.approx(4 * math.pi, abs=1e-12)
    assert np.all(rule.weights > 0)
    assert rule.integrate(rule.nodes[:, 2] ** 2) == pytest.approx(4 * math.pi / 3, abs=1e-12)


@pytest.mark.parametrize("degree", [0, 1, 7, 40])
def test_quadrature_exactness(degree):
    rule = build_quadrature(2, degree)
    Y = SphericalHarmonicBasis(degree).eval(rule.nodes)
    integrals = rule.integrate(Y)
    assert abs(integrals[0] - math.sqrt(4 * math.pi)) < 1e-10
    assert np.max(np.abs(integrals[1:]), initial=0.0) < 1e-10


def test_rotation_to_north():
    rng = np.random.default_rng(5)
    for a in random_unit(rng, 20):
        R = rotation_to_north(a)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)
        assert np.allclose(R @ a, E3, atol=1e-14)


def test_csv_roundtrip(tmp_path):
    xi = generate_points("uniform_random", 30, seed=2)
    write_points_csv(tmp_path / "p.csv", xi.points)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "x,y,z"
    assert np.array_equal(read_points_csv(tmp_path / "p.csv").points, xi.points)
    rule = build_quadrature(2, 6)
    write_quadrature_csv(tmp_path / "q.csv", rule)
    back = read_quadrature_csv(tmp_path / "q.csv", 6)
    assert np.array_equal(back.nodes, rule.nodes) and np.array_equal(back.weights, rule.weights)
