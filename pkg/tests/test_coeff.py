import math

import numpy as np
import pytest

from regan import coeff
from regan.coeff import (CoefficientField, ModulusOfContinuity, classify_modulus,
                         constant_laplacian, family_from_descriptor,
                         make_harmonic_family, make_radial_family,
                         make_trig_field, profile_log_inverse,
                         profile_log_oscillatory, profile_power, profile_zero,
                         validate_field)
from regan.tails import EvaluationError


def modulus_from(fn, label="test"):
    return ModulusOfContinuity(lambda r: fn(np.asarray(r, dtype=float)), label)


def test_zero_profile_gives_constant_field():
    field = make_harmonic_family("a", profile_zero(), 4)
    x = np.linspace(-0.5, 0.5, 11)
    a, b, c = field.coefficients(x, x[::-1])
    assert np.allclose(a, 1.0) and np.allclose(b, 0.0) and np.allclose(c, 1.0)


def test_harmonic_family_rejects_low_modes_and_big_profiles():
    with pytest.raises(ValueError, match="angular_mode"):
        make_harmonic_family("a", profile_zero(), 1)
    with pytest.raises(ValueError, match="1/2"):
        make_harmonic_family("a", profile_power(gamma=0.8, alpha=0.0), 2)
    with pytest.raises(ValueError, match="target"):
        make_harmonic_family("d", profile_zero(), 2)


def test_harmonic_family_values():
    field = make_harmonic_family("a", profile_log_inverse(0.4), 2, phase=0.0)
    r = 0.25
    phi = np.array([0.0, math.pi / 4, math.pi / 2])
    g = 0.4 / (1.0 + math.log(1.0 / r))
    a, b, c = field.coefficients(r * np.cos(phi), r * np.sin(phi))
    assert a == pytest.approx([1.0 + g, 1.0, 1.0 - g], abs=1e-14)
    assert np.allclose(b, 0.0) and np.allclose(c, 1.0)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
def test_classify_power_modulus(alpha):
    m = modulus_from(lambda r, alpha=alpha: r**alpha)
    got = classify_modulus(m, tol=0.01)
    assert got.verdicts == {"dini": "converged", "square_dini": "converged"}
    assert got.dini.total == pytest.approx(1.0 / alpha, abs=1e-8)
    assert got.square_dini.total == pytest.approx(1.0 / (2.0 * alpha), abs=1e-8)


def test_classify_log_inverse_modulus():
    m = modulus_from(lambda r: 1.0 / (1.0 + np.log(1.0 / r)))
    got = classify_modulus(m, tol=0.05)
    assert got.dini.verdict == "diverged"
    assert got.square_dini.verdict == "converged"
    # exact square-Dini integral is 1
    assert got.square_dini.total == pytest.approx(1.0, abs=0.01)


def test_classify_zero_modulus():
    got = classify_modulus(constant_laplacian().modulus, tol=1e-9)
    assert got.verdicts == {"dini": "converged", "square_dini": "converged"}
    assert got.dini.total == 0.0


def test_classify_monotone_comparison():
    small = classify_modulus(modulus_from(lambda r: 0.5 * r**0.5), tol=0.01)
    large = classify_modulus(modulus_from(lambda r: r**0.5), tol=0.01)
    assert large.dini.verdict == "converged"
    assert small.dini.partial <= large.dini.partial
    assert np.all(np.asarray(small.dini.sums) <= np.asarray(large.dini.sums) + 1e-15)


def test_classify_rejects_positive_tol_only():
    with pytest.raises(ValueError):
        classify_modulus(constant_laplacian().modulus, tol=0.0)


def test_classify_names_failing_radius():
    def bad(r):
        out = np.asarray(r, dtype=float).copy()
        out[out < 1e-6] = np.nan
        return out

    with pytest.raises(EvaluationError, match="r="):
        classify_modulus(modulus_from(bad), tol=0.01)


def test_validate_constant_field():
    report = validate_field(constant_laplacian())
    assert report.passes
    assert report.max_violation == pytest.approx(0.0, abs=1e-15)
    assert report.min_discriminant == pytest.approx(4.0, abs=1e-14)


def test_validate_log_inverse_family():
    field = make_harmonic_family("a", profile_log_inverse(0.4), 2)
    report = validate_field(field)
    assert report.passes
    # min of 4ac - b^2 on the largest sampled circle is 4 (1 - g(r))
    g_top = 0.4 / (1.0 + math.log(2.0))
    assert report.min_discriminant == pytest.approx(4.0 * (1.0 - g_top), rel=1e-6)
    assert report.modulus_nondecreasing and report.modulus_vanishes


def test_validate_flags_constant_b():
    one = lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    bfun = lambda x, y: np.full_like(np.asarray(x, dtype=float), 0.3)
    field = CoefficientField(one, bfun, one,
                             modulus_from(lambda r: 0.3 * r), 1.0)
    report = validate_field(field)
    assert not report.passes
    assert np.all(report.violations > 0)  # violated at every sampled radius


def test_oscillatory_envelope_is_monotone():
    field = make_harmonic_family("a", profile_log_oscillatory(0.4, 1.0), 2)
    report = validate_field(field)
    assert report.passes and report.modulus_nondecreasing


def test_radial_family_and_trig_field_validate():
    assert validate_field(make_radial_family("a", profile_log_inverse(0.4))).passes
    report = validate_field(make_trig_field(seed=3))
    assert report.passes
    assert not report.modulus_vanishes  # constant modulus: flagged, not fatal


def test_family_descriptor_roundtrip():
    desc = {"family": "harmonic", "target": "a",
            "profile": {"kind": "log_inverse", "gamma": 0.4},
            "mode": 2, "phase": 0.0}
    field = family_from_descriptor(desc)
    assert "harmonic" in field.label
    with pytest.raises(ValueError, match="unknown descriptor keys"):
        family_from_descriptor({**desc, "typo": 1})
    with pytest.raises(ValueError, match="unknown profile kind"):
        family_from_descriptor({**desc, "profile": {"kind": "nope"}})
    for name, d in coeff.builtin_families().items():
        family_from_descriptor(d)


def test_modulus_eps_matches_analytic_tail():
    prof = profile_log_inverse(0.4)
    field = make_harmonic_family("a", prof, 2)
    ts = np.linspace(0.0, 30.0, 7)
    assert np.allclose(field.modulus.eps(ts), 0.4 / (1.0 + ts), rtol=1e-12)
