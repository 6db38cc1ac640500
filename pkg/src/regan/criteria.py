"""Analytic sufficient conditions on the moment drift matrix.

Four checks, all phrased in the log-radius variable t = -log r on dyadic
windows and reported three-valued with witness tables:

* dini_R:            integral of |R| dt converges
* eigenvalue_bound:  window integrals of the top eigenvalue of the
                     symmetrized drift stay bounded above
* iterated_L1:       integral of |R(t) * int_t^inf R| dt converges
* special_*:         when the b- and c-moments vanish the system is driven
                     by the two a-moments alone; boundedness/convergence of
                     their prefix integrals is tested separately

Criteria are sufficient, not necessary: a failed criterion never refutes
stability, and the report notes when probes and criteria disagree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import tails
from .coeff import CoefficientField
from .moments import DEFAULT_QUADRATURE, QuadratureSettings, moment_matrix, moment_vector
from .tails import CONVERGED, DIVERGED, FAILS, HOLDS, INCONCLUSIVE, LN2

SECOND_ORDER = "second_order_differentiable"
LIPSCHITZ = "lipschitz_gradient"
NONE = "none"

_VERDICT_FROM_TAIL = {CONVERGED: HOLDS, DIVERGED: FAILS, INCONCLUSIVE: INCONCLUSIVE}


@dataclass
class CriterionResult:
    id: str
    verdict: str                       # holds / fails / inconclusive
    implied_conclusion: str = NONE
    flags: tuple = ()
    witness: dict = dc_field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "verdict": self.verdict,
            "implied_conclusion": self.implied_conclusion,
            "flags": list(self.flags),
            "witness": self.witness,
        }


@dataclass(frozen=True)
class CriteriaSettings:
    tol: float = 0.05              # tail-estimate tolerance for convergence
    n_windows: int = 80            # dyadic windows for nonnegative integrands
    prefix_windows: int = 120      # dyadic windows for signed prefix tests
    group: int = 4                 # window aggregation against oscillation
    applicability_tol: float = 1e-10
    applicability_samples: int = 33


def _system_evaluator(field: CoefficientField, quad: QuadratureSettings):
    def at(t: float) -> np.ndarray:
        r = min(1.0, math.exp(-t))
        return moment_matrix(moment_vector(field, r, quad))

    return at


def _window_sums_of(fn, n_windows: int) -> np.ndarray:
    """Window integrals of a scalar function of t given pointwise (non-vectorized)."""
    return tails.dyadic_window_sums(
        lambda ts: np.array([fn(float(t)) for t in np.atleast_1d(ts)]), n_windows)


def check_dini_integrability(field: CoefficientField,
                             settings: CriteriaSettings = CriteriaSettings(),
                             quad: QuadratureSettings = DEFAULT_QUADRATURE) -> CriterionResult:
    """Criterion dini_R: the drift matrix is integrable against dr/r.

    Equivalently integral over t of the max-entry norm of R(t).  Holding
    implies the full conclusion (second-order differentiability).
    """
    R_at = _system_evaluator(field, quad)
    sums = _window_sums_of(lambda t: float(np.max(np.abs(R_at(t)))), settings.n_windows)
    analysis = tails.analyze_sums(tails.group_sums(sums, settings.group), settings.tol)
    verdict = _VERDICT_FROM_TAIL[analysis.verdict]
    return CriterionResult(
        id="dini_R",
        verdict=verdict,
        implied_conclusion=SECOND_ORDER if verdict == HOLDS else NONE,
        witness={"integral": analysis.as_dict(), "norm": "max-abs entry",
                 "group": settings.group},
    )


def check_symmetric_part_bound(field: CoefficientField,
                               settings: CriteriaSettings = CriteriaSettings(),
                               quad: QuadratureSettings = DEFAULT_QUADRATURE) -> CriterionResult:
    """Criterion eigenvalue_bound: window integrals of mu(-(R+R^T)/2) stay bounded.

    The running sup over all dyadic window pairs of the integral must
    stabilize below a finite bound; the measured bound is recorded.
    Holding implies a Lipschitz gradient.
    """
    R_at = _system_evaluator(field, quad)

    def mu(t: float) -> float:
        R = R_at(t)
        S = -0.5 * (R + R.T)
        return float(np.linalg.eigvalsh(S)[-1])

    sums = _window_sums_of(mu, settings.prefix_windows)
    prefix = tails.prefix_from_sums(sums)
    # sup over window pairs [r1, r2] of the integral = prefix drawup;
    # upward escape is drawdown of the mirrored prefix
    scale = 1e-11 * (1.0 + float(np.max(np.abs(prefix))))
    mirrored = tails.lower_bound_verdict(-prefix, scale)
    drawup = float(np.max(prefix - np.minimum.accumulate(prefix)))
    verdict = {HOLDS: HOLDS, FAILS: FAILS, INCONCLUSIVE: INCONCLUSIVE}[mirrored.verdict]
    return CriterionResult(
        id="eigenvalue_bound",
        verdict=verdict,
        implied_conclusion=LIPSCHITZ if verdict == HOLDS else NONE,
        witness={"running_sup": drawup, "prefix": prefix.tolist(),
                 **mirrored.witness},
    )


def check_iterated_integral(field: CoefficientField,
                            settings: CriteriaSettings = CriteriaSettings(),
                            quad: QuadratureSettings = DEFAULT_QUADRATURE) -> CriterionResult:
    """Criterion iterated_L1: |R(t) * int_t^inf R dtau| integrable in t.

    The inner integral is the r-form integral of R against dr/r from 0 to
    r; its value at the smallest node is extrapolated as the mean of the
    prefix over the last index group.  A divergent inner integral flags
    the result inconclusive.
    """
    nodes_per_window = 16
    n_nodes = settings.n_windows * nodes_per_window + 1
    t_grid = np.linspace(0.0, settings.n_windows * LN2, n_nodes)
    R_at = _system_evaluator(field, quad)
    R_grid = np.array([R_at(float(t)) for t in t_grid])

    dt = t_grid[1] - t_grid[0]
    increments = 0.5 * dt * (R_grid[1:] + R_grid[:-1])
    prefix = np.concatenate([np.zeros((1, 4, 4)), np.cumsum(increments, axis=0)])

    # convergence of the inner integral, entry by entry via the six moments
    inner_divergent = False
    for i, j in ((0, 0), (1, 0), (0, 2), (1, 1), (0, 3), (1, 3)):
        entry_prefix = prefix[:, i, j]
        scale = 1e-11 * (1.0 + float(np.max(np.abs(entry_prefix))))
        sub = entry_prefix[::nodes_per_window]
        if tails.bounded_oscillation_verdict(sub, scale).verdict == FAILS:
            inner_divergent = True
            break
    if inner_divergent:
        return CriterionResult(
            id="iterated_L1", verdict=INCONCLUSIVE, flags=("inner_divergent",),
            witness={"note": "inner integral of R dr/r diverges at 0"},
        )

    limit = prefix[-(n_nodes // 4):].mean(axis=0)
    inner = limit[None, :, :] - prefix
    f_vals = np.array([np.max(np.abs(R_grid[k] @ inner[k])) for k in range(n_nodes)])
    f_prefix = np.concatenate([[0.0], np.cumsum(0.5 * dt * (f_vals[1:] + f_vals[:-1]))])
    boundary = f_prefix[::nodes_per_window]
    sums = np.diff(boundary)
    analysis = tails.analyze_sums(tails.group_sums(sums, settings.group), settings.tol)
    verdict = _VERDICT_FROM_TAIL[analysis.verdict]
    return CriterionResult(
        id="iterated_L1",
        verdict=verdict,
        implied_conclusion=SECOND_ORDER if verdict == HOLDS else NONE,
        witness={"integral": analysis.as_dict(),
                 "inner_limit_maxabs": float(np.max(np.abs(limit)))},
    )


def check_decoupled_case(field: CoefficientField,
                         settings: CriteriaSettings = CriteriaSettings(),
                         quad: QuadratureSettings = DEFAULT_QUADRATURE) -> list[CriterionResult]:
    """Decoupled special case: all b- and c-moments vanish.

    Then the system reduces to scalar integrating-factor equations in the
    two a-moments.  Four sub-criteria:

    * special_a1_bounded:   |int_s^t a1| bounded for large s < t
    * special_a2_lower:     int_s^t a2 bounded below
    * special_a1_converges: int^inf a1 converges to a finite limit
    * special_a2_extended:  int^inf a2 converges to an extended real > -inf

    The first two together give a Lipschitz gradient; all four give
    second-order differentiability.  When the case does not apply a single
    inconclusive result carries the flag not_applicable.
    """
    t_samples = np.linspace(0.0, (settings.prefix_windows - 1) * LN2,
                            settings.applicability_samples)
    worst = 0.0
    a_mom = []
    for t in t_samples:
        m = moment_vector(field, min(1.0, math.exp(-t)), quad)
        worst = max(worst, abs(m.b1), abs(m.b2), abs(m.c1), abs(m.c2))
        a_mom.append((m.a1, m.a2))
    if worst > settings.applicability_tol:
        return [CriterionResult(
            id="special_case", verdict=INCONCLUSIVE, flags=("not_applicable",),
            witness={"max_bc_moment": worst},
        )]

    def a_moment(idx):
        def fn(t: float) -> float:
            m = moment_vector(field, min(1.0, math.exp(-t)), quad)
            return (m.a1, m.a2)[idx]

        return fn

    results = []
    prefixes = []
    for idx in (0, 1):
        sums = _window_sums_of(a_moment(idx), settings.prefix_windows)
        prefixes.append(tails.prefix_from_sums(sums))
    floor0 = 1e-11 * (1.0 + float(np.max(np.abs(prefixes[0]))))
    floor1 = 1e-11 * (1.0 + float(np.max(np.abs(prefixes[1]))))

    bounded = tails.bounded_oscillation_verdict(prefixes[0], floor0)
    lower = tails.lower_bound_verdict(prefixes[1], floor1)
    converges = tails.bounded_oscillation_verdict(prefixes[0], floor0)
    extended = tails.extended_lower_verdict(prefixes[1], floor1)

    stable_part = bounded.verdict == HOLDS and lower.verdict == HOLDS
    full_part = stable_part and converges.verdict == HOLDS and extended.verdict == HOLDS
    results.append(CriterionResult(
        "special_a1_bounded", bounded.verdict,
        LIPSCHITZ if stable_part else NONE, (), bounded.witness))
    results.append(CriterionResult(
        "special_a2_lower", lower.verdict,
        LIPSCHITZ if stable_part else NONE, (), lower.witness))
    results.append(CriterionResult(
        "special_a1_converges", converges.verdict,
        SECOND_ORDER if full_part else NONE, (), converges.witness))
    results.append(CriterionResult(
        "special_a2_extended", extended.verdict,
        SECOND_ORDER if full_part else NONE, (), extended.witness))
    return results


def run_all_criteria(field: CoefficientField,
                     settings: CriteriaSettings = CriteriaSettings(),
                     quad: QuadratureSettings = DEFAULT_QUADRATURE) -> list[CriterionResult]:
    results = [
        check_dini_integrability(field, settings, quad),
        check_symmetric_part_bound(field, settings, quad),
        check_iterated_integral(field, settings, quad),
    ]
    results.extend(check_decoupled_case(field, settings, quad))
    return results


def criteria_conclusion(results) -> str:
    """Headline conclusion implied by the criteria (they take precedence)."""
    implied = {r.implied_conclusion for r in results}
    if SECOND_ORDER in implied:
        return SECOND_ORDER
    if LIPSCHITZ in implied:
        return LIPSCHITZ
    return NONE
