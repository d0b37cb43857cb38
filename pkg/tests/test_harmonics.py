import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import eval_gegenbauer

from polysbf.harmonics import (HarmonicExpansion, SphericalHarmonicBasis, addition_factor,
                               gegenbauer_at_one, gegenbauer_deriv, gegenbauer_eval, gegenbauer_table,
                               harmonic_dimension, muller_legendre, project, sh_index, sph_harm_eval)
from polysbf.sphere_geom import build_quadrature

from conftest import random_unit


@given(st.floats(0.1, 5.0), st.floats(-1.0, 1.0))
def test_gegenbauer_base_cases(lam, t):
    assert gegenbauer_eval(lam, 0, t) == 1.0
    assert gegenbauer_eval(lam, 1, t) == pytest.approx(2 * lam * t, abs=1e-15)


@pytest.mark.parametrize("lam", [0.5, 1.0, 1.5, 2.5])
def test_gegenbauer_matches_scipy_and_value_at_one(lam):
    # scipy's independent implementation serves as the oracle
    t = np.linspace(-1, 1, 41)
    for ell in range(0, 30):
        np.testing.assert_allclose(gegenbauer_eval(lam, ell, t), eval_gegenbauer(ell, lam, t),
                                   rtol=1e-11, atol=1e-11 * gegenbauer_at_one(lam, ell))
        assert gegenbauer_eval(lam, ell, 1.0) == pytest.approx(math.comb(ell + int(2 * lam) - 1, ell)
                                                               if float(2 * lam).is_integer() else
                                                               gegenbauer_at_one(lam, ell), rel=1e-12)


def test_gegenbauer_domain_error():
    with pytest.raises(ValueError):
        gegenbauer_eval(0.5, 3, 1.1)
    with pytest.raises(ValueError):
        gegenbauer_table(0.5, 600, 0.0)


@pytest.mark.parametrize("lam", [0.5, 1.0])
def test_uniform_bound_and_muller(lam):
    t = np.linspace(-1, 1, 2001)
    d = int(2 * lam + 1)
    for ell in range(0, 25):
        vals = gegenbauer_eval(lam, ell, t)
        assert np.max(np.abs(vals)) == pytest.approx(gegenbauer_at_one(lam, ell), rel=1e-10)
        assert muller_legendre(d, ell, 1.0) == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(vals, gegenbauer_at_one(lam, ell) * muller_legendre(d, ell, t), rtol=1e-10,
                                   atol=1e-12 * gegenbauer_at_one(lam, ell))


def test_derivative_identity_and_constant():
    t = np.linspace(-0.9, 0.9, 7)
    assert np.all(gegenbauer_deriv(0.5, 0, t, 1) == 0)
    for ell in range(0, 10):
        np.testing.assert_allclose(gegenbauer_deriv(0.5, ell + 1, t, 1), 2 * 0.5 * gegenbauer_eval(1.5, ell, t))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.floats(-0.95, 0.95), st.integers(1, 3), st.sampled_from([0.5, 1.0, 1.5]))
def test_derivative_vs_finite_difference(ell, t, order, lam):
    step = 1e-4
    lower = lambda x: gegenbauer_deriv(lam, ell, x, order - 1)
    fd = (lower(t + step) - lower(t - step)) / (2 * step)
    exact = gegenbauer_deriv(lam, ell, t, order)
    # derivatives of Gegenbauer polynomials peak at t = 1
    third = abs(gegenbauer_deriv(lam, ell, 1.0, order + 2))
    base = abs(gegenbauer_deriv(lam, ell, 1.0, order - 1))
    truncation = step ** 2 / 6 * third
    roundoff = 1e-15 * base / step
    assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1.0) + truncation + roundoff


def test_harmonic_dimension():
    for d in (1, 2, 3, 5):
        assert harmonic_dimension(d, 0) == 1
    for ell in range(20):
        assert harmonic_dimension(2, ell) == 2 * ell + 1
    assert harmonic_dimension(3, 2) == 9
    for d in (2, 3, 4):
        for ell in range(1, 12):
            closed = (2 * ell + d - 1) * math.gamma(ell + d - 1) / (math.gamma(ell + 1) * math.gamma(d))
            assert harmonic_dimension(d, ell) == round(closed)


def test_constant_harmonic_and_index_errors():
    basis = SphericalHarmonicBasis(4)
    x = random_unit(np.random.default_rng(0), 10)
    np.testing.assert_allclose(sph_harm_eval(basis, 0, 0, x), 1 / math.sqrt(4 * math.pi))
    with pytest.raises(IndexError):
        sph_harm_eval(basis, 5, 0, x)
    with pytest.raises(IndexError):
        sph_harm_eval(basis, 2, 3, x)


def test_gram_matrix():
    L = 30
    basis = SphericalHarmonicBasis(L)
    rule = build_quadrature(2, 2 * L)
    Y = basis.eval(rule.nodes)
    gram = Y.T @ (rule.weights[:, None] * Y)
    assert np.max(np.abs(gram - np.eye(basis.size))) <= 1e-9


def test_addition_theorem():
    L = 20
    basis = SphericalHarmonicBasis(L)
    rng = np.random.default_rng(11)
    x, a = random_unit(rng, 100), random_unit(rng, 100)
    Yx, Ya = basis.eval(x), basis.eval(a)
    t = np.sum(x * a, axis=1)
    for ell in range(L + 1):
        sl = slice(ell * ell, (ell + 1) ** 2)
        lhs = np.sum(Yx[:, sl] * Ya[:, sl], axis=1)
        rhs = addition_factor(2, ell) * gegenbauer_eval(0.5, ell, t)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * harmonic_dimension(2, ell)


def test_project_examples():
    basis = SphericalHarmonicBasis(6)
    rule = build_quadrature(2, 12)
    c = project(lambda x: sph_harm_eval(basis, 3, 1, x), basis, rule).coeffs
    target = np.zeros(basis.size)
    target[sh_index(3, 1)] = 1.0
    assert np.max(np.abs(c - target)) <= 1e-10
    assert np.all(project(lambda x: np.zeros(len(x)), basis, rule).coeffs == 0)
    zonal = project(lambda x: gegenbauer_eval(0.5, 4, x[:, 2]), basis, rule)
    nonzero = {(ell, m) for ell in range(7) for m in range(-ell, ell + 1) if abs(zonal.get(ell, m)) > 1e-10}
    assert nonzero == {(4, 0)}
    with pytest.raises(ValueError):
        project(lambda x: x[:, 0], basis, build_quadrature(2, 11))


def test_expansion_ops_and_json():
    rng = np.random.default_rng(3)
    f = HarmonicExpansion(rng.standard_normal(25))
    g = HarmonicExpansion(rng.standard_normal(9))
    x = random_unit(rng, 15)
    np.testing.assert_allclose((f + g).eval(x), f.eval(x) + g.eval(x), atol=1e-12)
    np.testing.assert_allclose((f - f).coeffs, 0)
    back = HarmonicExpansion.from_json(f.to_json())
    np.testing.assert_array_equal(back.coeffs, f.coeffs)
    sym = f.multiply_symbol(lambda ell: ell * (ell + 1))
    assert sym.get(2, -1) == pytest.approx(6 * f.get(2, -1))
    assert np.all(f.restrict({1}).coeffs[f.degrees() != 1] == 0)
    # Parseval under an exact quadrature
    rule = build_quadrature(2, 8)
    assert rule.integrate(f.eval(rule.nodes) ** 2) == pytest.approx(f.l2_norm() ** 2, rel=1e-12)
