"""Tests for quadrature, projections, and harmonic analysis on the sphere."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gradest.sphere import (
    SphereSamples,
    affine_complement,
    build_harmonic_basis,
    build_sphere_rule,
    first_moment,
    harmonic_analyze,
    harmonic_synthesize,
    project_affine,
    sphere_mean,
    truncation_residual,
)


@pytest.fixture(scope="module", params=[2, 3])
def rule(request):
    return build_sphere_rule(request.param, K=8)


@pytest.fixture(scope="module")
def basis(rule):
    return build_harmonic_basis(rule, max_degree=8)


def test_rejects_unsupported_dimension():
    with pytest.raises(ValueError):
        build_sphere_rule(4, K=8)
    with pytest.raises(ValueError):
        build_sphere_rule(1, K=8)


def test_weights_normalized(rule):
    assert abs(rule.weights.sum() - 1.0) < 1e-14
    assert np.all(rule.weights > 0)


def test_node_count_circle():
    r = build_sphere_rule(2, K=8)
    assert r.node_count >= 2 * 2 * 8 + 1  # at least 33 nodes


def test_second_moments(rule):
    # mean(theta_k theta_l) = delta_kl / n
    n = rule.dimension
    moments = np.einsum("i,ik,il->kl", rule.weights, rule.nodes, rule.nodes)
    assert_allclose(moments, np.eye(n) / n, atol=1e-12)


def test_first_moments_vanish(rule):
    assert_allclose(rule.weights @ rule.nodes, 0.0, atol=1e-13)


def test_sphere_mean_examples(rule):
    ones = SphereSamples(rule, np.ones(rule.node_count))
    assert sphere_mean(ones) == pytest.approx(1.0, abs=1e-14)
    theta1 = SphereSamples(rule, rule.nodes[:, 0])
    assert sphere_mean(theta1) == pytest.approx(0.0, abs=1e-13)


def test_sphere_mean_sum_of_squares_3d():
    r = build_sphere_rule(3, K=8)
    f = SphereSamples(r, r.nodes[:, 0] ** 2 + r.nodes[:, 1] ** 2)
    assert sphere_mean(f) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_first_moment_examples(rule):
    n = rule.dimension
    f = SphereSamples(rule, rule.nodes[:, 1])
    expected = np.zeros(n)
    expected[1] = 1.0 / n
    assert_allclose(first_moment(f), expected, atol=1e-13)
    const = SphereSamples(rule, np.ones(rule.node_count))
    assert_allclose(first_moment(const), np.zeros(n), atol=1e-13)


def test_first_moment_linearity():
    r = build_sphere_rule(2, K=8)
    f = SphereSamples(r, 3.0 * r.nodes[:, 0] + r.nodes[:, 1])
    assert_allclose(first_moment(f), [1.5, 0.5], atol=1e-13)


def test_projection_fixed_points(rule):
    ones = SphereSamples(rule, np.ones(rule.node_count))
    assert_allclose(project_affine(ones).values, 1.0, atol=1e-13)
    for k in range(rule.dimension):
        th = SphereSamples(rule, rule.nodes[:, k])
        assert_allclose(project_affine(th).values, th.values, atol=1e-13)


def test_projection_kills_degree_two(rule):
    f = SphereSamples(rule, rule.nodes[:, 0] * rule.nodes[:, 1])
    assert_allclose(project_affine(f).values, 0.0, atol=1e-13)
    assert_allclose(affine_complement(f).values, f.values, atol=1e-13)


def test_complement_mixed_example(rule):
    quad = rule.nodes[:, 0] * rule.nodes[:, 1]
    f = SphereSamples(rule, 2.0 + rule.nodes[:, 0] + quad)
    assert_allclose(affine_complement(f).values, quad, atol=1e-13)


def test_projection_idempotent_random(rule):
    rng = np.random.default_rng(7)
    worst_pp = 0.0
    worst_perp = 0.0
    for _ in range(1000):
        f = SphereSamples(rule, rng.standard_normal(rule.node_count))
        pf = project_affine(f)
        ppf = project_affine(pf)
        worst_pp = max(worst_pp, np.max(np.abs(ppf.values - pf.values)))
        perp = affine_complement(f)
        worst_perp = max(worst_perp, np.max(np.abs(project_affine(perp).values)))
    assert worst_pp < 1e-12
    assert worst_perp < 1e-12


def test_basis_dimensions(basis):
    n = basis.rule.dimension
    for k in range(basis.max_degree + 1):
        count = len(basis.degree_slice(k))
        if k == 0:
            assert count == 1
        elif n == 2:
            assert count == 2
        else:
            assert count == 2 * k + 1


def test_basis_orthonormality(basis):
    w = basis.rule.weights
    gram = basis.table @ (w[:, None] * basis.table.T)
    assert np.max(np.abs(gram - np.eye(basis.size))) < 1e-10


def test_gradient_tables_match_beltrami(basis):
    # integration by parts: <grad phi_i, grad phi_j> = k(k+n-2) delta_ij
    w = basis.rule.weights
    n_modes = basis.size
    gram = np.einsum("j,ajc,bjc->ab", w, basis.grad_table, basis.grad_table)
    expected = np.diag(-basis.beltrami)
    assert np.max(np.abs(gram - expected)) < 1e-9 * max(1.0, np.max(-basis.beltrami))
    assert gram.shape == (n_modes, n_modes)


def test_analyze_unit_mode(basis):
    idx = basis.degree_slice(2)[0]
    f = SphereSamples(basis.rule, basis.table[idx].copy())
    c = harmonic_analyze(f, basis)
    expected = np.zeros(basis.size)
    expected[idx] = 1.0
    assert_allclose(c, expected, atol=1e-10)


def test_analyze_constant(basis):
    f = SphereSamples(basis.rule, np.ones(basis.rule.node_count))
    c = harmonic_analyze(f, basis)
    assert c[0] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(c[1:])) < 1e-12


def test_round_trip_band_limited(basis):
    rng = np.random.default_rng(42)
    for _ in range(20):
        coeffs = rng.standard_normal(basis.size)
        f = harmonic_synthesize(coeffs, basis)
        back = harmonic_analyze(f, basis)
        assert np.max(np.abs(back - coeffs)) < 1e-10
        again = harmonic_synthesize(back, basis)
        assert np.max(np.abs(again.values - f.values)) < 1e-10


def test_parseval(basis):
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal(basis.size)
    f = harmonic_synthesize(coeffs, basis)
    energy = sphere_mean(SphereSamples(basis.rule, f.values**2))
    assert energy == pytest.approx(np.sum(coeffs**2), rel=1e-10)


def test_complement_by_degree(basis):
    # affine_complement is the identity on degrees >= 2, zero on 0 and 1
    rng = np.random.default_rng(11)
    coeffs = rng.standard_normal(basis.size)
    f = harmonic_synthesize(coeffs, basis)
    perp = affine_complement(f)
    expect = coeffs.copy()
    expect[basis.degrees <= 1] = 0.0
    assert_allclose(harmonic_analyze(perp, basis), expect, atol=1e-10)


def test_truncation_residual_reports_aliasing(basis):
    exact = harmonic_synthesize(np.ones(basis.size), basis)
    assert truncation_residual(exact, basis) < 1e-10
    # a degree-(K+4) mode is invisible to the basis and fully reported
    rule = basis.rule
    if rule.dimension == 2:
        phi = np.arctan2(rule.nodes[:, 1], rule.nodes[:, 0])
        rough = SphereSamples(rule, np.cos((basis.max_degree + 4) * phi))
        assert truncation_residual(rough, basis) > 0.9
