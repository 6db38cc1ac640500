"""Coefficient fields for the planar operator a*u_xx + b*u_xy + c*u_yy.

Fields are normalized at the origin (a, b, c) -> (1, 0, 1) and declare a
modulus of continuity bounding sup_{|x|=r} (|a-1| + |b| + |c-1|).  All
evaluators are vectorized over numpy arrays and immutable after
construction, so they are safe for concurrent read-only use.  Coefficients
are extended by their unit-circle values for r > 1; only r <= 1 is ever
analyzed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import tails
from .tails import EvaluationError, TailAnalysis


@dataclass(frozen=True)
class ModulusOfContinuity:
    """Nondecreasing bound omega(r) on the coefficient oscillation at radius r.

    `analytic_tail`, when present, is the closed form of t -> omega(e^-t),
    used by oracle tests only.
    """

    omega: Callable[[np.ndarray], np.ndarray]
    label: str = "omega"
    analytic_tail: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, r):
        return self.omega(np.minimum(np.asarray(r, dtype=float), 1.0))

    def eps(self, t):
        """omega in the log-radius variable, eps(t) = omega(e^-t)."""
        return self(np.exp(-np.asarray(t, dtype=float)))


@dataclass(frozen=True)
class CoefficientField:
    """Evaluators for a, b, c on the punctured unit disk plus declared bounds."""

    a: Callable
    b: Callable
    c: Callable
    modulus: ModulusOfContinuity
    ellipticity_lower: float
    label: str = "field"
    modulus_slack: float = 0.0

    def coefficients(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.a(x, y), self.b(x, y), self.c(x, y)


def _clamp_radius(x, y):
    r = np.hypot(x, y)
    scale = np.where(r > 1.0, 1.0 / np.where(r > 1.0, r, 1.0), 1.0)
    return x * scale, y * scale, np.minimum(r, 1.0)


def constant_laplacian() -> CoefficientField:
    """The unperturbed field a = c = 1, b = 0."""
    one = lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
    modulus = ModulusOfContinuity(lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                                  label="zero", analytic_tail=lambda t: 0.0 * np.asarray(t))
    return CoefficientField(one, zero, one, modulus, ellipticity_lower=4.0,
                            label="constant")


# ---------------------------------------------------------------------------
# Radial profiles g(r) for the built-in families.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialProfile:
    """A radial amplitude g(r) plus its nondecreasing envelope |g| <= env."""

    g: Callable[[np.ndarray], np.ndarray]
    envelope: Callable[[np.ndarray], np.ndarray]
    label: str
    analytic_tail: Optional[Callable] = None  # t -> envelope(e^-t)


def profile_zero() -> RadialProfile:
    z = lambda r: np.zeros_like(np.asarray(r, dtype=float))
    return RadialProfile(z, z, "zero", analytic_tail=lambda t: 0.0 * np.asarray(t))


def profile_power(gamma: float, alpha: float) -> RadialProfile:
    """g(r) = gamma * r^alpha; Dini for alpha > 0."""
    g = lambda r: gamma * np.asarray(r, dtype=float) ** alpha
    tail = lambda t: gamma * np.exp(-alpha * np.asarray(t, dtype=float))
    return RadialProfile(g, g, f"power(gamma={gamma}, alpha={alpha})", tail)


def profile_log_inverse(gamma: float) -> RadialProfile:
    """g(r) = gamma / (1 + log(1/r)); square-Dini but not Dini."""

    def g(r):
        r = np.asarray(r, dtype=float)
        return gamma / (1.0 + np.log(1.0 / r))

    tail = lambda t: gamma / (1.0 + np.asarray(t, dtype=float))
    return RadialProfile(g, g, f"log_inverse(gamma={gamma})", tail)


def profile_log_oscillatory(gamma: float, eta: float) -> RadialProfile:
    """g(r) = gamma * cos(eta*log(1/r)) / (1 + log(1/r)).

    Sign changes make |g| non-monotone, so the declared envelope is the
    monotone majorant gamma / (1 + log(1/r)).
    """

    def g(r):
        r = np.asarray(r, dtype=float)
        t = np.log(1.0 / r)
        return gamma * np.cos(eta * t) / (1.0 + t)

    env = profile_log_inverse(gamma)
    return RadialProfile(g, env.g, f"log_oscillatory(gamma={gamma}, eta={eta})",
                         env.analytic_tail)


_PROFILE_KINDS = {
    "zero": (profile_zero, ()),
    "power": (profile_power, ("gamma", "alpha")),
    "log_inverse": (profile_log_inverse, ("gamma",)),
    "log_oscillatory": (profile_log_oscillatory, ("gamma", "eta")),
}


def profile_from_descriptor(desc: dict) -> RadialProfile:
    if "kind" not in desc:
        raise ValueError("profile descriptor needs a 'kind'")
    kind = desc["kind"]
    if kind not in _PROFILE_KINDS:
        raise ValueError(f"unknown profile kind {kind!r}")
    maker, params = _PROFILE_KINDS[kind]
    extra = set(desc) - {"kind"} - set(params)
    if extra:
        raise ValueError(f"unknown profile keys {sorted(extra)} for kind {kind!r}")
    missing = set(params) - set(desc)
    if missing:
        raise ValueError(f"profile kind {kind!r} missing {sorted(missing)}")
    return maker(**{p: float(desc[p]) for p in params})


# ---------------------------------------------------------------------------
# Family constructors.
# ---------------------------------------------------------------------------

_TARGETS = ("a", "b", "c")
_PROFILE_CHECK_RADII = 2.0 ** -np.arange(0, 40, dtype=float)


def _check_profile_bound(profile: RadialProfile):
    vals = np.abs(np.asarray(profile.g(_PROFILE_CHECK_RADII), dtype=float))
    if np.any(vals > 0.5 + 1e-12):
        k = int(np.argmax(vals > 0.5 + 1e-12))
        raise ValueError(
            f"|g| exceeds 1/2 at r={_PROFILE_CHECK_RADII[k]:.3g} "
            f"(value {vals[k]:.3g}); ellipticity would be at risk"
        )


def _field_with_target(target, base_other, perturbation, modulus, label,
                       ellipticity_lower):
    one = lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
    evals = {"a": one, "b": zero, "c": one}

    def perturbed(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        base = 0.0 if target == "b" else 1.0
        return base + perturbation(x, y)

    evals[target] = perturbed
    return CoefficientField(evals["a"], evals["b"], evals["c"], modulus,
                            ellipticity_lower=ellipticity_lower, label=label)


def make_harmonic_family(target: str, radial_profile: RadialProfile,
                         angular_mode: int, phase: float = 0.0) -> CoefficientField:
    """Field with one coefficient perturbed by g(r) * cos(n*phi + phase).

    Angular modes n >= 2 only: modes 0 and 1 would break the normalization
    (a, b, c)(0) = (1, 0, 1).  |g| <= 1/2 is enforced on a dyadic grid.
    """
    if target not in _TARGETS:
        raise ValueError(f"target must be one of {_TARGETS}")
    if int(angular_mode) != angular_mode or angular_mode < 2:
        raise ValueError("angular_mode must be an integer >= 2")
    _check_profile_bound(radial_profile)
    n = int(angular_mode)

    def perturbation(x, y):
        xc, yc, r = _clamp_radius(x, y)
        phi = np.arctan2(yc, xc)
        g = np.where(r > 0, radial_profile.g(np.maximum(r, 1e-300)), 0.0)
        return g * np.cos(n * phi + phase)

    modulus = ModulusOfContinuity(
        lambda r: np.abs(np.asarray(radial_profile.envelope(np.asarray(r, dtype=float)))),
        label=radial_profile.label,
        analytic_tail=radial_profile.analytic_tail,
    )
    label = f"harmonic({target}, n={n}, {radial_profile.label})"
    return _field_with_target(target, None, perturbation, modulus, label,
                              ellipticity_lower=2.0)


def make_radial_family(target: str, radial_profile: RadialProfile) -> CoefficientField:
    """Field with one coefficient perturbed radially: no angular dependence."""
    if target not in _TARGETS:
        raise ValueError(f"target must be one of {_TARGETS}")
    _check_profile_bound(radial_profile)

    def perturbation(x, y):
        _, _, r = _clamp_radius(x, y)
        return np.asarray(radial_profile.g(np.maximum(r, 1e-300)), dtype=float) * np.ones_like(r)

    modulus = ModulusOfContinuity(
        lambda r: np.abs(np.asarray(radial_profile.envelope(np.asarray(r, dtype=float)))),
        label=radial_profile.label,
        analytic_tail=radial_profile.analytic_tail,
    )
    label = f"radial({target}, {radial_profile.label})"
    return _field_with_target(target, None, perturbation, modulus, label,
                              ellipticity_lower=2.0)


def make_trig_field(seed: int, degree: int = 6, amplitude: float = 0.2) -> CoefficientField:
    """Random trigonometric-polynomial perturbations of all three coefficients.

    Each coefficient gets sum_n (alpha_n cos n*phi + beta_n sin n*phi) with
    n <= degree and sum |alpha| + |beta| = amplitude, constant in r.  Used
    for cross-check suites where only the circle structure matters.
    """
    rng = np.random.default_rng(seed)
    coeffs = {}
    for name in _TARGETS:
        alpha = rng.uniform(-1.0, 1.0, degree + 1)
        beta = rng.uniform(-1.0, 1.0, degree + 1)
        beta[0] = 0.0
        total = np.sum(np.abs(alpha)) + np.sum(np.abs(beta))
        coeffs[name] = (alpha * amplitude / total, beta * amplitude / total)

    def maker(name):
        alpha, beta = coeffs[name]
        base = 0.0 if name == "b" else 1.0

        def evaluate(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            phi = np.arctan2(y, x)
            out = np.full_like(phi, base, dtype=float)
            for n in range(degree + 1):
                out = out + alpha[n] * np.cos(n * phi) + beta[n] * np.sin(n * phi)
            return out

        return evaluate

    modulus = ModulusOfContinuity(
        lambda r: np.full_like(np.asarray(r, dtype=float), 3.0 * amplitude),
        label=f"const({3.0 * amplitude})",
    )
    lam = 4.0 * (1.0 - amplitude) ** 2 - amplitude**2
    return CoefficientField(maker("a"), maker("b"), maker("c"), modulus,
                            ellipticity_lower=lam, label=f"trig(seed={seed})")


# ---------------------------------------------------------------------------
# Descriptor loading (the CLI config format) and built-in registry.
# ---------------------------------------------------------------------------


def family_from_descriptor(desc: dict) -> CoefficientField:
    """Build a field from a JSON-style descriptor.

    {"family": "harmonic", "target": "a",
     "profile": {"kind": "log_inverse", "gamma": 0.4}, "mode": 2, "phase": 0.0}
    """
    if not isinstance(desc, dict) or "family" not in desc:
        raise ValueError("family descriptor must be a dict with a 'family' key")
    kind = desc["family"]
    if kind == "constant":
        _require_keys(desc, {"family"})
        return constant_laplacian()
    if kind == "harmonic":
        _require_keys(desc, {"family", "target", "profile", "mode", "phase"},
                      optional={"phase"})
        return make_harmonic_family(desc["target"],
                                    profile_from_descriptor(desc["profile"]),
                                    int(desc["mode"]),
                                    float(desc.get("phase", 0.0)))
    if kind == "radial":
        _require_keys(desc, {"family", "target", "profile"})
        return make_radial_family(desc["target"],
                                  profile_from_descriptor(desc["profile"]))
    if kind == "trig_random":
        _require_keys(desc, {"family", "seed", "degree", "amplitude"},
                      optional={"degree", "amplitude"})
        return make_trig_field(int(desc["seed"]), int(desc.get("degree", 6)),
                               float(desc.get("amplitude", 0.2)))
    raise ValueError(f"unknown family kind {kind!r}")


def _require_keys(desc, allowed, optional=frozenset()):
    extra = set(desc) - set(allowed)
    if extra:
        raise ValueError(f"unknown descriptor keys {sorted(extra)}")
    missing = set(allowed) - set(desc) - set(optional)
    if missing:
        raise ValueError(f"descriptor missing keys {sorted(missing)}")


def builtin_families() -> dict:
    """Named descriptors for the shipped analytic families."""
    return {
        "constant": {"family": "constant"},
        "dini_power": {"family": "harmonic", "target": "a",
                       "profile": {"kind": "power", "gamma": 0.3, "alpha": 0.5},
                       "mode": 2, "phase": 0.0},
        "square_dini_log": {"family": "harmonic", "target": "a",
                            "profile": {"kind": "log_inverse", "gamma": 0.4},
                            "mode": 2, "phase": 0.0},
        "oscillatory_log": {"family": "harmonic", "target": "a",
                            "profile": {"kind": "log_oscillatory", "gamma": 0.4,
                                        "eta": 1.0},
                            "mode": 2, "phase": 0.0},
        "radial_log": {"family": "radial", "target": "a",
                       "profile": {"kind": "log_inverse", "gamma": 0.4}},
    }


# ---------------------------------------------------------------------------
# Modulus classification (Dini / square-Dini) and field validation.
# ---------------------------------------------------------------------------


@dataclass
class ModulusClassification:
    """Three-valued verdicts for the Dini and square-Dini integrals."""

    dini: TailAnalysis
    square_dini: TailAnalysis

    @property
    def verdicts(self) -> dict:
        return {"dini": self.dini.verdict, "square_dini": self.square_dini.verdict}


def _guarded_eps(m: ModulusOfContinuity):
    def f(ts):
        rs = np.exp(-np.asarray(ts, dtype=float))
        try:
            vals = np.asarray(m(rs), dtype=float)
        except Exception as exc:  # noqa: BLE001 - rewrap with the radius
            raise EvaluationError(f"modulus evaluation failed near r={rs.min():.6g}: {exc}") from exc
        if vals.shape != rs.shape:
            vals = np.broadcast_to(vals, rs.shape)
        if not np.all(np.isfinite(vals)):
            r_bad = float(rs[~np.isfinite(vals)][0])
            raise EvaluationError(f"modulus not finite at r={r_bad:.6g}")
        return vals

    return f


def classify_modulus(m: ModulusOfContinuity, tol: float,
                     n_windows: int = 60) -> ModulusClassification:
    """Dyadic-window verdicts for integral(omega/r) and integral(omega^2/r).

    In t = -log r both integrals become plain integrals of eps(t) and
    eps(t)^2 over uniform windows; tails are extrapolated per
    `tails.analyze_sums` (heuristic, three-valued).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    eps = _guarded_eps(m)
    s1 = tails.dyadic_window_sums(eps, n_windows)
    s2 = tails.dyadic_window_sums(lambda t: eps(t) ** 2, n_windows)
    return ModulusClassification(tails.analyze_sums(s1, tol),
                                 tails.analyze_sums(s2, tol))


@dataclass
class FieldValidation:
    """Normalization-bound and ellipticity report over sampled circles."""

    radii: np.ndarray
    violations: np.ndarray       # per radius: max (|a-1|+|b|+|c-1|) - omega(r)
    min_discriminant: float      # min over samples of 4ac - b^2
    max_violation: float
    passes: bool
    modulus_nondecreasing: bool
    modulus_vanishes: bool


def dyadic_radii(count: int, start: int = 1) -> np.ndarray:
    return 2.0 ** -np.arange(start, start + count, dtype=float)


def validate_field(field: CoefficientField, radii=None,
                   nodes_per_circle: int = 256) -> FieldValidation:
    """Check the declared modulus bound and ellipticity on sampled circles."""
    if radii is None:
        radii = dyadic_radii(20)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(radii > 1):
        raise ValueError("radii must lie in (0, 1]")
    if nodes_per_circle < 16:
        raise ValueError("nodes_per_circle must be >= 16")
    phi = np.linspace(0.0, 2.0 * math.pi, nodes_per_circle, endpoint=False)
    violations = np.empty_like(radii)
    min_disc = math.inf
    for k, r in enumerate(radii):
        x, y = r * np.cos(phi), r * np.sin(phi)
        a, b, c = field.coefficients(x, y)
        osc = np.abs(a - 1.0) + np.abs(b) + np.abs(c - 1.0)
        violations[k] = float(np.max(osc) - field.modulus(r))
        min_disc = min(min_disc, float(np.min(4.0 * a * c - b * b)))
    omega_vals = np.asarray(field.modulus(radii[np.argsort(radii)]), dtype=float)
    nondecreasing = bool(np.all(np.diff(omega_vals) >= -1e-13))
    # vanishing trend: the smallest sampled values should not exceed the largest
    small, large = omega_vals[0], omega_vals[-1]
    vanishes = bool(small <= 0.25 * large + 1e-13 or large <= 1e-13)
    max_violation = float(np.max(violations))
    passes = (max_violation <= 1e-12 + field.modulus_slack
              and min_disc >= field.ellipticity_lower - 1e-12)
    return FieldValidation(radii, violations, min_disc, max_violation, passes,
                           nondecreasing, vanishes)
