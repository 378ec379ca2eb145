"""Tests for coefficient fields, moduli, and the square-Dini classifier."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gradest.coeffs import (
    CoefficientField,
    GSProfile,
    check_field,
    check_modulus,
    constant_modulus,
    load_scenario,
    log_power_modulus,
    make_gs_field,
    make_identity_field,
    scenario_from_dict,
    square_dini_integral,
)
from gradest.sphere import build_sphere_rule


def log_power_integral(amp, s, r_lo, r_hi=1.0):
    """Closed form of int omega^2/r dr for omega = amp (log(e/r))^-s.

    Substituting t = log(e/r) turns it into amp^2 int t^(-2s) dt between
    log(e/r_hi) and log(e/r_lo).
    """
    t_lo = 1.0 - math.log(r_hi)
    t_hi = 1.0 - math.log(r_lo)
    if s == 0.5:
        return amp**2 * (math.log(t_hi) - math.log(t_lo))
    e = 1.0 - 2.0 * s
    return amp**2 * (t_hi**e - t_lo**e) / e


def test_identity_field_basics():
    f = make_identity_field(2)
    assert_allclose(f.matrix([0.3, -0.1]), np.eye(2))
    assert f.lam_min == f.lam_max == 1.0
    assert float(f.modulus(0.5)) == pytest.approx(1e-15)


def test_identity_field_check_passes():
    f = make_identity_field(3)
    rule = build_sphere_rule(3, K=6)
    radii = np.exp(np.linspace(np.log(1e-6), np.log(1.5), 40))
    report = check_field(f, radii, rule)
    assert report.ok
    assert report.identity_beyond_one


def test_gs_zero_profile_is_identity():
    f = make_gs_field(2, GSProfile(0.0))
    x = np.array([0.3, 0.4])
    assert_allclose(f.matrix(x), np.eye(2), atol=1e-15)


def test_gs_matrix_at_axis_point():
    # at r = 1 the log-power profile equals its amplitude
    f = make_gs_field(2, GSProfile(0.5, s=0.75))
    a = f.matrix([1.0, 0.0])
    assert_allclose(a, [[1.5, 0.0], [0.0, 1.0]], atol=1e-14)


@pytest.mark.parametrize("n", [2, 3])
def test_gs_eigenvalues_oracle(n):
    # oracle: direct eigendecomposition at random points must give
    # {1 (n-1 times), 1 + g(r)}
    profile = GSProfile(0.3, s=0.75)
    f = make_gs_field(n, profile)
    rng = np.random.default_rng(5)
    for _ in range(25):
        x = rng.standard_normal(n)
        x *= rng.uniform(0.05, 1.0) / np.linalg.norm(x)
        eigs = np.sort(np.linalg.eigvalsh(f.matrix(x)))
        g = float(profile(np.linalg.norm(x)))
        expected = np.sort(np.r_[np.ones(n - 1), 1.0 + g])
        assert_allclose(eigs, expected, atol=1e-12)


def test_gs_rejects_ellipticity_violation():
    with pytest.raises(ValueError, match="ellipticity"):
        make_gs_field(2, GSProfile(-0.99, s=0.75, ellipticity_margin=0.05))


def test_gs_extension_identity_outside():
    f = make_gs_field(3, GSProfile(0.5))
    rule = build_sphere_rule(3, K=4)
    a = f.at_radius(1.7, rule.nodes)
    assert np.max(np.abs(a - np.eye(3))) == 0.0


def test_square_dini_convergent_case():
    m = log_power_modulus(1.0, 0.75)
    res = square_dini_integral(m, r0=1e-4)
    assert res.convergent
    assert res.integral_above == pytest.approx(log_power_integral(1.0, 0.75, 1e-4), rel=1e-8)
    # full integral is amp^2 * int_1^inf t^-1.5 dt = 2
    assert res.total == pytest.approx(2.0, rel=2e-2)
    assert res.fitted_exponent == pytest.approx(1.5, abs=0.1)


def test_square_dini_borderline_divergent():
    m = log_power_modulus(1.0, 0.5)
    res = square_dini_integral(m, r0=1e-4)
    assert not res.convergent
    assert math.isinf(res.total)
    # harmonic-sum oracle: octave sums decay like 1/j
    assert res.fitted_exponent == pytest.approx(1.0, abs=0.05)


def test_square_dini_constant_divergent():
    m = constant_modulus(0.05)
    res = square_dini_integral(m, r0=1e-3)
    assert not res.convergent
    assert res.integral_above == pytest.approx(0.05**2 * math.log(1e3), rel=1e-8)


@pytest.mark.parametrize("s,expect", [(0.4, False), (0.5, False), (0.6, True), (0.75, True), (1.0, True)])
def test_square_dini_family_classification(s, expect):
    res = square_dini_integral(log_power_modulus(0.7, s), r0=1e-3)
    assert res.convergent is expect


def test_square_dini_rejects_bad_inputs():
    m = log_power_modulus(1.0, 0.75)
    with pytest.raises(ValueError):
        square_dini_integral(m, r0=1.5)
    decreasing = constant_modulus(1.0)
    decreasing._fn = lambda r: 1.0 + np.asarray(r)  # increasing omega is fine
    square_dini_integral(decreasing, r0=0.01)
    decreasing._fn = lambda r: 2.0 - np.asarray(r)  # decreasing in r: invalid
    with pytest.raises(ValueError, match="nondecreasing"):
        square_dini_integral(decreasing, r0=0.01)


def test_modulus_invariants_log_power():
    m = log_power_modulus(0.5, 0.75)
    rep = check_modulus(m)
    assert rep.monotone and rep.positive and rep.flat_beyond_one
    # kappa chosen so the scaling property holds on the whole sampled range
    assert rep.kappa_radius == pytest.approx(1.0, rel=1e-6)


def test_modulus_kappa_failure_detected():
    # force kappa too large for s = 0.75; property must fail near r = 1
    m = log_power_modulus(0.5, 0.75, kappa=0.5)
    rep = check_modulus(m)
    assert rep.kappa_radius < 1.0


def test_check_field_gs_deviation_matches_profile():
    profile = GSProfile(0.5, s=0.75)
    f = make_gs_field(2, profile)
    rule = build_sphere_rule(2, K=8)
    for r in [0.9, 0.5, 0.01, 1e-4]:
        dev = f.deviation(r, rule.nodes)
        # the circle rule contains (1, 0), where |A - I| attains |g| exactly
        assert dev == pytest.approx(float(profile(r)), rel=1e-12)


def test_check_field_gs_deviation_3d_bounded_by_profile():
    profile = GSProfile(0.5, s=0.75)
    f = make_gs_field(3, profile)
    rule = build_sphere_rule(3, K=8)
    for r in [0.5, 0.01]:
        dev = f.deviation(r, rule.nodes)
        g = float(profile(r))
        assert dev <= g + 1e-14
        assert dev > 0.9 * g


def test_check_field_reports_ellipticity_failure():
    # hand-built broken field: g = -1 kills an eigenvalue
    def entries(r, nodes):
        return np.eye(2)[None] - np.einsum("ik,il->ikl", nodes, nodes)

    broken = CoefficientField(2, entries, constant_modulus(1.0), 0.0, 1.0)
    rule = build_sphere_rule(2, K=4)
    report = check_field(broken, np.array([0.5]), rule)
    assert not report.ok
    assert any("ellipticity" in msg for msg in report.failures)


def test_scenario_round_trip(tmp_path):
    raw = {
        "dimension": 3,
        "field": {"family": "gs", "kappa_amp": 0.5, "s": 0.75},
        "grid": {"min_octave": -16, "max_octave": 3, "points_per_octave": 12},
        "degree": 6,
        "seed": 17,
    }
    cfg = scenario_from_dict(raw)
    assert cfg.dimension == 3 and cfg.family == "gs"
    assert cfg.points_per_octave == 12 and cfg.seed == 17
    field = cfg.build_field()
    assert field.label == "gilbarg-serrin"

    path = tmp_path / "scenario.json"
    path.write_text('{"dimension": 2, "field": {"family": "identity"}}')
    cfg2 = load_scenario(path)
    assert cfg2.dimension == 2 and cfg2.family == "identity"


def test_scenario_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown scenario keys"):
        scenario_from_dict({"dimensions": 2})
    with pytest.raises(ValueError, match="unknown field keys"):
        scenario_from_dict({"field": {"family": "gs", "amplitude": 1.0}})
    with pytest.raises(ValueError, match="family"):
        scenario_from_dict({"field": {"family": "random"}})
    with pytest.raises(ValueError, match="points_per_octave"):
        scenario_from_dict({"grid": {"points_per_octave": 1000}})
