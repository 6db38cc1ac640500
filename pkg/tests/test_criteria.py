import math

import numpy as np
import pytest

from regan.coeff import (constant_laplacian, make_harmonic_family,
                         make_radial_family, profile_log_inverse,
                         profile_log_oscillatory, profile_power)
from regan.criteria import (LIPSCHITZ, NONE, SECOND_ORDER, CriteriaSettings,
                            check_decoupled_case, check_dini_integrability,
                            check_iterated_integral, check_symmetric_part_bound,
                            criteria_conclusion, run_all_criteria)
from regan.dynsys import (CONSTANT, STABLE, asymptotic_constancy_probe,
                          reduced_system, uniform_stability_probe)
from regan.moments import moment_matrix, moment_vector

DINI_FIELD = make_harmonic_family("a", profile_power(0.3, 0.5), 2)
HARMONIC_FIELD = make_harmonic_family("a", profile_log_inverse(0.4), 2)
OSC_FIELD = make_harmonic_family("a", profile_log_oscillatory(0.4, 1.0), 2)


def by_id(results):
    return {r.id: r for r in results}


def test_dini_holds_on_constant_field():
    res = check_dini_integrability(constant_laplacian())
    assert res.verdict == "holds"
    assert res.implied_conclusion == SECOND_ORDER
    assert res.witness["integral"]["total"] == pytest.approx(0.0, abs=1e-12)


def test_dini_holds_on_power_family():
    res = check_dini_integrability(DINI_FIELD)
    assert res.verdict == "holds"
    # |R| = g/2 entrywise max, so the t-integral is exactly gamma
    assert res.witness["integral"]["total"] == pytest.approx(0.3, abs=1e-6)


def test_dini_fails_on_harmonic_family():
    res = check_dini_integrability(HARMONIC_FIELD)
    assert res.verdict == "fails"
    assert res.implied_conclusion == NONE


def test_dini_not_satisfied_on_oscillatory_family():
    # |cos| has positive mean: the Dini-type integral still diverges
    res = check_dini_integrability(OSC_FIELD)
    assert res.verdict in ("fails", "inconclusive")


def test_symmetrized_eigenvalues_match_hand_oracle():
    # rank-two symmetrized drift: eigenvalues (-a1/2) (1 +- sqrt 2) and zeros
    field = make_harmonic_family("a", profile_power(0.3, 0.0), 2)
    R = moment_matrix(moment_vector(field, 0.5))
    S = -0.5 * (R + R.T)
    got = np.sort(np.linalg.eigvalsh(S))
    a1 = -0.15
    expect = np.sort([0.0, 0.0, (-a1 / 2.0) * (1.0 + math.sqrt(2.0)),
                      (-a1 / 2.0) * (1.0 - math.sqrt(2.0))])
    assert np.allclose(got, expect, atol=1e-12)


def test_eigenvalue_bound_verdicts():
    assert check_symmetric_part_bound(constant_laplacian()).verdict == "holds"
    assert check_symmetric_part_bound(HARMONIC_FIELD).verdict == "fails"
    # signed oscillation does not help: the top eigenvalue is nonnegative
    assert check_symmetric_part_bound(OSC_FIELD).verdict == "fails"


def test_iterated_integral_verdicts():
    assert check_iterated_integral(constant_laplacian()).verdict == "holds"
    res = check_iterated_integral(HARMONIC_FIELD)
    assert res.verdict == "inconclusive"
    assert "inner_divergent" in res.flags
    res = check_iterated_integral(OSC_FIELD)
    assert res.verdict == "holds"
    assert res.implied_conclusion == SECOND_ORDER


def test_special_case_detector():
    res = check_decoupled_case(make_harmonic_family("c", profile_power(0.2, 0.0), 2))
    assert len(res) == 1
    assert res[0].verdict == "inconclusive"
    assert "not_applicable" in res[0].flags

    radial = check_decoupled_case(make_radial_family("b", profile_power(0.2, 0.5)))
    assert {r.id for r in radial} == {"special_a1_bounded", "special_a2_lower",
                                     "special_a1_converges", "special_a2_extended"}


def test_special_case_harmonic_family_fails_boundedness():
    got = by_id(check_decoupled_case(HARMONIC_FIELD))
    assert got["special_a1_bounded"].verdict == "fails"
    assert got["special_a1_converges"].verdict == "fails"
    assert got["special_a2_lower"].verdict == "holds"     # a2 is identically 0
    assert all(r.implied_conclusion == NONE for r in got.values())


def test_special_case_oscillatory_family_holds():
    got = by_id(check_decoupled_case(OSC_FIELD))
    assert got["special_a1_bounded"].verdict == "holds"
    assert got["special_a2_lower"].verdict == "holds"
    assert got["special_a1_converges"].verdict == "holds"
    assert got["special_a2_extended"].verdict == "holds"
    assert got["special_a1_bounded"].implied_conclusion == LIPSCHITZ
    assert got["special_a1_converges"].implied_conclusion == SECOND_ORDER


def test_special_case_sin_mode_declining_a2():
    field = make_harmonic_family("a", profile_log_inverse(0.4), 2,
                                 phase=-math.pi / 2)
    got = by_id(check_decoupled_case(field))
    # a2 = -g/2 < 0 declines without bound
    assert got["special_a2_lower"].verdict == "fails"
    assert got["special_a2_extended"].verdict == "fails"


def test_conclusion_precedence():
    results = run_all_criteria(OSC_FIELD)
    assert criteria_conclusion(results) == SECOND_ORDER
    results = run_all_criteria(HARMONIC_FIELD)
    assert criteria_conclusion(results) == NONE
    results = run_all_criteria(DINI_FIELD)
    assert criteria_conclusion(results) == SECOND_ORDER


def test_monotone_in_amplitude():
    # shrinking the perturbation never flips holds to fails
    for gamma in (0.05, 0.15, 0.3):
        field = make_harmonic_family("a", profile_power(gamma, 0.5), 2)
        assert check_dini_integrability(field).verdict == "holds"
    for gamma in (0.1, 0.25, 0.4):
        field = make_harmonic_family("a", profile_log_oscillatory(gamma, 1.0), 2)
        assert check_iterated_integral(field).verdict == "holds"


def test_criteria_probe_agreement_on_dini_family():
    # a holding Dini criterion must come with stable + constant probes
    sys = reduced_system(DINI_FIELD)
    assert uniform_stability_probe(sys, [0.0, 2.0, 5.0], 30.0).uniform_stability == STABLE
    assert asymptotic_constancy_probe(sys, 1.0, 30.0).asymptotic_constancy == CONSTANT
